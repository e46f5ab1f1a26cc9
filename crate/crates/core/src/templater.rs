//! Placeholder templates for live-coding programs and randomized corpus rendering.
//!
//! Two placeholder forms are recognized:
//!
//! * `{{ name }}` draws a value for `name` from the [`ParamSpace`]. A name with
//!   a numeric suffix (`note_2`, `sleep3`) falls back to its base entry, so one
//!   template can hold several independent draws of the same kind.
//! * `{% range LO HI %}` / `{% irange LO HI %}` draws an inline real (two
//!   decimals) or integer from `[LO, HI]`.
//!
//! Substitution is purely lexical; the surrounding program text is copied verbatim.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_from};

pub const TEMPLATE_EXTENSION: &str = ".pi.tpl";
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{template}: byte {offset}: {message}")]
    Parse {
        template: String,
        offset: usize,
        message: String,
    },
    #[error("cannot resolve placeholder `{0}`")]
    Unresolved(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    Value {
        name: String,
        offset: usize,
    },
    Range {
        key: String,
        lo: f64,
        hi: f64,
        integer: bool,
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub name: String,
    pub body: String,
    segments: Vec<Segment>,
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Lexes a template body into literal text and placeholders.
pub fn parse_template(name: &str, body: &str) -> Result<Template, TemplateError> {
    let err = |offset: usize, message: String| TemplateError::Parse {
        template: name.to_string(),
        offset,
        message,
    };
    if body.is_empty() {
        return Err(err(0, "template body is empty".into()));
    }
    let mut segments = Vec::new();
    let mut text = String::new();
    let mut ranges = 0usize;
    let mut pos = 0;
    while pos < body.len() {
        let rest = &body[pos..];
        let (open, close) = if rest.starts_with("{{") {
            ("{{", "}}")
        } else if rest.starts_with("{%") {
            ("{%", "%}")
        } else {
            let ch = rest.chars().next().unwrap();
            text.push(ch);
            pos += ch.len_utf8();
            continue;
        };
        let inner_start = pos + open.len();
        let Some(len) = body[inner_start..].find(close) else {
            return Err(err(pos, format!("unterminated `{open}`")));
        };
        let inner = &body[inner_start..inner_start + len];
        if inner.contains(open) {
            return Err(err(pos, format!("nested `{open}` before `{close}`")));
        }
        if !text.is_empty() {
            segments.push(Segment::Text(std::mem::take(&mut text)));
        }
        let inner = inner.trim();
        if open == "{{" {
            if inner.is_empty() {
                return Err(err(pos, "empty placeholder name".into()));
            }
            if !is_identifier(inner) {
                return Err(err(
                    pos,
                    format!("`{inner}` is not a valid placeholder name"),
                ));
            }
            segments.push(Segment::Value {
                name: inner.to_string(),
                offset: pos,
            });
        } else {
            let parts: Vec<&str> = inner.split_whitespace().collect();
            let integer = match parts.first() {
                Some(&"range") => false,
                Some(&"irange") => true,
                _ => return Err(err(pos, format!("unknown tag `{inner}`"))),
            };
            let bounds: Option<Vec<f64>> = parts[1..].iter().map(|p| p.parse().ok()).collect();
            let (lo, hi) = match bounds.as_deref() {
                Some(&[lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => (lo, hi),
                _ => {
                    return Err(err(
                        pos,
                        format!("`{inner}` needs two numeric bounds LO ≤ HI"),
                    ))
                }
            };
            segments.push(Segment::Range {
                key: format!("range#{ranges}"),
                lo,
                hi,
                integer,
                offset: pos,
            });
            ranges += 1;
        }
        pos = inner_start + len + close.len();
    }
    if !text.is_empty() {
        segments.push(Segment::Text(text));
    }
    Ok(Template {
        name: name.to_string(),
        body: body.to_string(),
        segments,
    })
}

impl Template {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Named placeholders in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Value { name, .. } if seen.insert(name.as_str()) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn ranges(&self) -> impl Iterator<Item = (&str, f64, f64, bool)> {
        self.segments.iter().filter_map(|s| match s {
            Segment::Range {
                key,
                lo,
                hi,
                integer,
                ..
            } => Some((key.as_str(), *lo, *hi, *integer)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub integer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Domain {
    Choice(Vec<String>),
    Interval(Interval),
}

/// Sampling domain for every placeholder name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSpace {
    pub domains: BTreeMap<String, Domain>,
}

const DEFAULT_PARAMS: &str = include_str!("../templates/params.toml");

impl Default for ParamSpace {
    fn default() -> Self {
        Self::from_toml(DEFAULT_PARAMS).expect("shipped parameter space parses")
    }
}

impl ParamSpace {
    pub fn from_toml(text: &str) -> Result<Self, TemplateError> {
        let space: Self = toml::from_str(text).map_err(|e| TemplateError::Config(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (k, d) in &self.domains {
            match d {
                Domain::Choice(v) if v.is_empty() => {
                    return Err(TemplateError::Config(format!("`{k}` has an empty list")))
                }
                Domain::Interval(i)
                    if !(i.min <= i.max) || !i.min.is_finite() || !i.max.is_finite() =>
                {
                    return Err(TemplateError::Config(format!("`{k}` needs min ≤ max")))
                }
                Domain::Interval(i) if i.integer && i.min.ceil() > i.max.floor() => {
                    return Err(TemplateError::Config(format!("`{k}` contains no integer")))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Looks up `name`, falling back to the name with any numeric suffix removed.
    pub fn resolve(&self, name: &str) -> Option<&Domain> {
        self.domains.get(name).or_else(|| {
            let base = name.trim_end_matches(|c: char| c.is_ascii_digit());
            let base = base.strip_suffix('_').unwrap_or(base);
            (base != name && !base.is_empty())
                .then(|| self.domains.get(base))
                .flatten()
        })
    }
}

fn draw_interval(rng: &mut impl Rng, lo: f64, hi: f64, integer: bool) -> String {
    if integer {
        let (lo, hi) = (lo.ceil() as i64, hi.floor() as i64);
        rng.random_range(lo..=hi).to_string()
    } else if lo == hi {
        format!("{lo:.2}")
    } else {
        format!("{:.2}", rng.random_range(lo..=hi))
    }
}

/// Draws one value for every needed name; names are visited in sorted order.
pub fn sample_params(
    space: &ParamSpace,
    needed: &BTreeSet<String>,
    seed: u64,
) -> Result<Bindings, TemplateError> {
    let mut rng = rng_from(seed);
    let mut out = Bindings::new();
    for name in needed {
        let value = match space.resolve(name) {
            Some(Domain::Choice(list)) => list[rng.random_range(0..list.len())].clone(),
            Some(Domain::Interval(i)) => draw_interval(&mut rng, i.min, i.max, i.integer),
            None => return Err(TemplateError::Unresolved(name.clone())),
        };
        out.insert(name.clone(), value);
    }
    Ok(out)
}

/// Bindings for every placeholder of `template`, inline ranges included.
pub fn sample_bindings(
    template: &Template,
    space: &ParamSpace,
    seed: u64,
) -> Result<Bindings, TemplateError> {
    let needed: BTreeSet<String> = template
        .placeholders()
        .into_iter()
        .map(String::from)
        .collect();
    let mut out = sample_params(space, &needed, seed)?;
    let mut rng = rng_from(derive_seed(seed, &[u64::MAX]));
    for (key, lo, hi, integer) in template.ranges() {
        out.insert(key.to_string(), draw_interval(&mut rng, lo, hi, integer));
    }
    Ok(out)
}

/// Substitutes bindings into the template.
pub fn render(template: &Template, bindings: &Bindings) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.body.len());
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Value { name: key, .. } | Segment::Range { key, .. } => out.push_str(
                bindings
                    .get(key)
                    .ok_or_else(|| TemplateError::Unresolved(key.clone()))?,
            ),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedProgram {
    pub file_name: String,
    pub template: String,
    pub variant: usize,
    pub seed: u64,
    pub bindings: Bindings,
    #[serde(skip)]
    pub text: String,
}

pub fn program_file_name(template: &str, variant: usize) -> String {
    format!("{template}__{variant:04}.pi")
}

/// Renders `per_template` variants of every template. Variant `v` of template
/// `t` uses a seed derived from `(seed, t, v)`, so output does not depend on
/// rendering order.
pub fn generate_corpus(
    templates: &[Template],
    space: &ParamSpace,
    per_template: usize,
    seed: u64,
) -> Result<Vec<RenderedProgram>, TemplateError> {
    if per_template == 0 {
        return Err(TemplateError::Config(
            "per_template must be at least 1".into(),
        ));
    }
    let mut names = BTreeSet::new();
    for t in templates {
        if !names.insert(t.name.as_str()) {
            return Err(TemplateError::Config(format!(
                "duplicate template name `{}`",
                t.name
            )));
        }
        for p in t.placeholders() {
            if space.resolve(p).is_none() {
                return Err(TemplateError::Unresolved(format!(
                    "{} (in template {})",
                    p, t.name
                )));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..templates.len())
        .flat_map(|t| (0..per_template).map(move |v| (t, v)))
        .collect();
    jobs.into_par_iter()
        .map(|(t, v)| {
            let template = &templates[t];
            let variant_seed = derive_seed(seed, &[t as u64, v as u64]);
            let bindings = sample_bindings(template, space, variant_seed)?;
            let text = render(template, &bindings)?;
            Ok(RenderedProgram {
                file_name: program_file_name(&template.name, v),
                template: template.name.clone(),
                variant: v,
                seed: variant_seed,
                bindings,
                text,
            })
        })
        .collect()
}

/// Writes each program as `<file_name>` plus a line-per-program manifest.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    programs: &[RenderedProgram],
) -> Result<(), TemplateError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    for p in programs {
        fs::write(dir.join(&p.file_name), &p.text)?;
        manifest.push_str(&serde_json::to_string(p).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a corpus manifest and the program texts it lists.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<RenderedProgram>, TemplateError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut out = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let mut p: RenderedProgram = serde_json::from_str(line)
            .map_err(|e| TemplateError::Config(format!("{MANIFEST_FILE} line {}: {e}", i + 1)))?;
        p.text = fs::read_to_string(dir.join(&p.file_name))?;
        out.push(p);
    }
    Ok(out)
}

/// Loads every `*.pi.tpl` file in `dir`, sorted by name.
pub fn load_template_dir(dir: impl AsRef<Path>) -> Result<Vec<Template>, TemplateError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(TEMPLATE_EXTENSION)
                .map(|stem| (stem.to_string(), e.path()))
        })
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|(name, path)| parse_template(&name, &fs::read_to_string(path)?))
        .collect()
}

const BUILTIN: [(&str, &str); 8] = [
    ("acid_bass", include_str!("../templates/acid_bass.pi.tpl")),
    (
        "ambient_choir",
        include_str!("../templates/ambient_choir.pi.tpl"),
    ),
    ("chord_walk", include_str!("../templates/chord_walk.pi.tpl")),
    (
        "compus_beats",
        include_str!("../templates/compus_beats.pi.tpl"),
    ),
    ("drum_loop", include_str!("../templates/drum_loop.pi.tpl")),
    (
        "echo_melody",
        include_str!("../templates/echo_melody.pi.tpl"),
    ),
    (
        "scale_arpeggio",
        include_str!("../templates/scale_arpeggio.pi.tpl"),
    ),
    ("wobble_pad", include_str!("../templates/wobble_pad.pi.tpl")),
];

/// The eight templates shipped with the crate.
pub fn builtin_templates() -> Vec<Template> {
    BUILTIN
        .iter()
        .map(|(n, b)| parse_template(n, b).expect("shipped template parses"))
        .collect()
}
