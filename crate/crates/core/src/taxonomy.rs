//! The canonical strategy taxonomy and the rule-based template matcher.
//!
//! Thirty fine-grained strategy templates, each in exactly one of five broad
//! subject groups, form the closed category set for the whole pipeline.
//! Free-form strategy text is mapped onto a template by a first-match-wins
//! phrase table (`rules.txt`), with an optional fallback template for text
//! no rule covers.

use alloc::borrow::ToOwned;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Identifier of a strategy template, e.g. `angle_chasing`.
pub type TemplateId = String;

/// Number of templates in the canonical taxonomy.
pub const TAXONOMY_SIZE: usize = 30;

/// Embedded copy of the shipped taxonomy file.
pub const DEFAULT_TEMPLATES_JSON: &str = include_str!("../../../data/templates.json");

/// Embedded copy of the shipped rule table.
pub const DEFAULT_RULES: &str = include_str!("../../../data/rules.txt");

/// Broad subject group a template belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubjectGroup {
    Algebraic,
    NumberTheory,
    Geometry,
    Combinatorial,
    Structural,
}

/// One entry of the strategy taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryTemplate {
    pub id: TemplateId,
    pub subject_group: SubjectGroup,
    pub description: String,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TaxonomyError {
    #[error("taxonomy parse error: {0}")]
    Parse(String),
    #[error("taxonomy must contain exactly {TAXONOMY_SIZE} templates, got {0}")]
    WrongCount(usize),
    #[error("duplicate template id `{0}`")]
    DuplicateId(TemplateId),
    #[error("rule line {line}: expected `phrase<TAB>template_id`")]
    MalformedRule { line: usize },
    #[error("rule line {line}: unknown template `{template}`")]
    UnknownRuleTemplate { line: usize, template: TemplateId },
    #[error("no rule matches and no fallback template is configured")]
    NoMatch,
}

/// The taxonomy as a validated, ordered list of templates.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    templates: Vec<CategoryTemplate>,
}

impl Taxonomy {
    /// Parse a taxonomy from the `templates.json` format and validate the
    /// 30-entry and unique-id invariants.
    pub fn from_json(json: &str) -> Result<Self, TaxonomyError> {
        let templates: Vec<CategoryTemplate> = serde_json::from_str(json)
            .map_err(|e| TaxonomyError::Parse(alloc::format!("{e}")))?;
        Self::from_templates(templates)
    }

    pub fn from_templates(templates: Vec<CategoryTemplate>) -> Result<Self, TaxonomyError> {
        if templates.len() != TAXONOMY_SIZE {
            return Err(TaxonomyError::WrongCount(templates.len()));
        }
        for (i, t) in templates.iter().enumerate() {
            if templates[..i].iter().any(|u| u.id == t.id) {
                return Err(TaxonomyError::DuplicateId(t.id.clone()));
            }
        }
        Ok(Taxonomy { templates })
    }

    /// The shipped canonical taxonomy.
    pub fn canonical() -> Self {
        Self::from_json(DEFAULT_TEMPLATES_JSON).expect("shipped taxonomy is valid")
    }

    pub fn templates(&self) -> &[CategoryTemplate] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&CategoryTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }
}

/// A phrase-to-template rule table, first match in file order wins.
#[derive(Debug, Clone)]
pub struct RuleTable {
    rules: Vec<(String, TemplateId)>,
    fallback: Option<TemplateId>,
}

impl RuleTable {
    /// Parse the `rules.txt` format: `phrase<TAB>template_id` per line,
    /// `#` starts a comment, blank lines ignored. Every referenced template
    /// must exist in `taxonomy`.
    pub fn parse(text: &str, taxonomy: &Taxonomy) -> Result<Self, TaxonomyError> {
        let mut rules = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (phrase, template) = line
                .split_once('\t')
                .ok_or(TaxonomyError::MalformedRule { line: idx + 1 })?;
            let phrase = phrase.trim();
            let template = template.trim();
            if phrase.is_empty() || template.is_empty() {
                return Err(TaxonomyError::MalformedRule { line: idx + 1 });
            }
            if !taxonomy.contains(template) {
                return Err(TaxonomyError::UnknownRuleTemplate {
                    line: idx + 1,
                    template: template.to_owned(),
                });
            }
            rules.push((phrase.to_lowercase(), template.to_owned()));
        }
        Ok(RuleTable {
            rules,
            fallback: None,
        })
    }

    /// The shipped default rule table.
    pub fn default_table(taxonomy: &Taxonomy) -> Self {
        Self::parse(DEFAULT_RULES, taxonomy).expect("shipped rule table is valid")
    }

    /// Configure a fallback template returned when no rule matches.
    pub fn with_fallback(mut self, template: TemplateId) -> Self {
        self.fallback = Some(template);
        self
    }

    pub fn fallback(&self) -> Option<&TemplateId> {
        self.fallback.as_ref()
    }

    /// First matching template for the text, if any rule applies.
    pub fn match_text(&self, text: &str) -> Option<&TemplateId> {
        let lowered = text.to_lowercase();
        self.rules
            .iter()
            .find(|(phrase, _)| lowered.contains(phrase.as_str()))
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Map strategy text to a template: first matching rule, then the configured
/// fallback, otherwise an error.
pub fn map_to_template(strategy_text: &str, rules: &RuleTable) -> Result<TemplateId, TaxonomyError> {
    rules
        .match_text(strategy_text)
        .or(rules.fallback.as_ref())
        .cloned()
        .ok_or(TaxonomyError::NoMatch)
}

/// The per-subject fallback template used when free text matches no rule.
///
/// Only three `*_general` templates exist, so geometry falls back to
/// `geometric_general`, mixed-topic problems to `coordinate_general`, and
/// every symbolic subject to `algebraic_general`.
pub fn subject_fallback(subject: crate::corpus::Subject) -> TemplateId {
    use crate::corpus::Subject;
    match subject {
        Subject::Geometry => "geometric_general".to_owned(),
        Subject::Mixed => "coordinate_general".to_owned(),
        Subject::Algebra | Subject::NumberTheory | Subject::Combinatorics => {
            "algebraic_general".to_owned()
        }
    }
}
