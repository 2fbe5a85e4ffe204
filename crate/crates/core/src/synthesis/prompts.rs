//! Prompt templates, stored as text assets under `prompts/`.
//!
//! Lines starting with `#` at the top of an asset are a header (name,
//! version, notes) and are not sent. `{{name}}` placeholders are filled by
//! [`render`].

use super::Vignette;

pub const TRANSLATE: &str = include_str!("../../prompts/translate.txt");
pub const SKETCH: &str = include_str!("../../prompts/sketch.txt");
pub const SYNTHESIZE_CODE: &str = include_str!("../../prompts/synthesize_code.txt");
pub const SCORE_TRANSLATION: &str = include_str!("../../prompts/score_translation.txt");
pub const SCORE_SKETCH: &str = include_str!("../../prompts/score_sketch.txt");
pub const SCORE_MODEL: &str = include_str!("../../prompts/score_model.txt");
pub const CANONICALIZE: &str = include_str!("../../prompts/canonicalize.txt");

pub const EXEMPLAR_SCENARIO: &str = include_str!("../../prompts/exemplar_scenario.txt");
pub const EXEMPLAR_TRANSLATION: &str = include_str!("../../prompts/exemplar_translation.txt");
pub const EXEMPLAR_SCRATCHPAD: &str = include_str!("../../prompts/exemplar_scratchpad.txt");
pub const EXEMPLAR_MODEL: &str = include_str!("../../prompts/exemplar_model.medppl");

pub const BACKGROUND: &str = "Model a doctor's office. Patients come into the doctor's office, and the doctor needs to infer a diagnosis from their symptoms and a review of the patient's medical history.";

pub const END_TRANSLATION: &str = "<END_LANGUAGE_TO_WEBPPL_CODE>";
pub const START_TRANSLATION: &str = "<START_LANGUAGE_TO_WEBPPL_CODE>";
pub const START_SCRATCHPAD: &str = "<START_SCRATCHPAD>";
pub const END_SCRATCHPAD: &str = "<END_SCRATCHPAD>";
pub const START_TRACE: &str = "<START_CONCEPT_TRACE>";
pub const END_TRACE: &str = "<END_CONCEPT_TRACE>";
pub const START_MODEL: &str = "<START_WEBPPL_MODEL>";
pub const END_MODEL: &str = "<END_WEBPPL_MODEL>";

/// Fills `{{name}}` placeholders. Every placeholder in the template must be
/// supplied; unknown names panic, since templates are compiled in.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let body: String = template
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n");
    let mut out = String::with_capacity(body.len() * 2);
    let mut rest = body.as_str();
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let close = rest[open..].find("}}").expect("unclosed placeholder") + open;
        let name = &rest[open + 2..close];
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .or_else(|| exemplar(name))
            .unwrap_or_else(|| panic!("no value for placeholder `{name}`"));
        out.push_str(value.trim_end());
        rest = &rest[close + 2..];
    }
    out.push_str(rest);
    out.push('\n');
    out
}

fn exemplar(name: &str) -> Option<&'static str> {
    Some(match name {
        "exemplar_scenario" => EXEMPLAR_SCENARIO,
        "exemplar_translation" => EXEMPLAR_TRANSLATION,
        "exemplar_scratchpad" => EXEMPLAR_SCRATCHPAD,
        "exemplar_model" => EXEMPLAR_MODEL,
        _ => return None,
    })
}

/// The scenario block for a vignette, in the exemplar's format.
pub fn scenario(vignette: &Vignette) -> String {
    let mut s = String::from("<START_SCENARIO>\nBACKGROUND\n");
    s.push_str(BACKGROUND);
    s.push_str("\n\nCONDITIONS\n");
    for sentence in &vignette.sentences {
        s.push_str(sentence.trim());
        s.push('\n');
    }
    s.push_str("\nQUERIES\n");
    for (i, q) in vignette.queries.iter().enumerate() {
        s.push_str(&format!("Query {}: {}\n", i + 1, q.trim()));
    }
    s.push_str("<END_SCENARIO>");
    s
}
