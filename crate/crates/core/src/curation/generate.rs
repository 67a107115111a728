use crate::gateway::{ChatRequest, Gateway, Role, Stage};
use crate::prompts::{render, PromptId};

use super::builtin::DomainContext;
use super::rules::{parse_clause_line, push_clause, RuleSet};
use super::CurationError;

pub fn meta_prompt(ctx: &DomainContext) -> Result<String, CurationError> {
    ctx.validate()?;
    Ok(render(
        PromptId::MetaRules,
        &[
            ("domain_name", &ctx.domain_name),
            ("primary_interaction", &ctx.primary_interaction),
            ("key_metadata", &ctx.key_metadata),
            ("domain_characteristics", &ctx.characteristics),
        ],
    )?)
}

/// Parses clause lines out of a free-form reply. Lines that do not look
/// like clauses are ignored; clause-like lines that fail to parse are
/// skipped with a warning.
pub fn parse_generated_rules(domain: &str, raw: &str) -> Result<RuleSet, CurationError> {
    let mut rules = Vec::new();
    for line in raw.lines().map(str::trim).filter(|l| l.matches('|').count() >= 2) {
        match parse_clause_line(line) {
            Ok((name, clause)) => push_clause(&mut rules, name, clause),
            Err(e) => log::warn!("skipping generated rule line {line:?}: {e}"),
        }
    }
    if rules.is_empty() {
        return Err(CurationError::RuleParse {
            message: "no parseable rule lines in reply".into(),
            raw: raw.to_string(),
        });
    }
    RuleSet::new(domain, rules)
}

/// Asks the memory manager for a rule set for `ctx`.
pub fn generate_ruleset(ctx: &DomainContext, gateway: &Gateway) -> Result<RuleSet, CurationError> {
    let prompt = meta_prompt(ctx)?;
    let request = ChatRequest::new(Role::Mem, Stage::RuleGen, prompt);
    let raw = gateway.complete(&request)?;
    let domain = super::Domain::from_domain_name(&ctx.domain_name)
        .map(|d| d.key().to_string())
        .unwrap_or_else(|| ctx.domain_name.trim().to_string());
    parse_generated_rules(&domain, &raw)
}
