use serde::{Deserialize, Serialize};

use super::{Clause, PromptBundle};

/// Where a token of a merged prompt came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrigin {
    Base,
    Clause,
}

/// Appends the `k_edit` lowest-scoring clauses (ties by id) to `base`,
/// then prunes back to `budget` tokens: appended duplicates first, then
/// base duplicates, then the lowest-salience tokens (latest first on ties).
/// Unscored clauses rank after every scored one.
pub fn merge_topk(
    base: &PromptBundle,
    clauses: &[Clause],
    k_edit: usize,
    budget: usize,
) -> PromptBundle {
    let mut picked: Vec<&Clause> = clauses.iter().collect();
    picked.sort_by(|a, b| {
        let (sa, sb) = (a.score.unwrap_or(f64::INFINITY), b.score.unwrap_or(f64::INFINITY));
        sa.total_cmp(&sb).then(a.id.cmp(&b.id))
    });
    picked.truncate(k_edit);

    let mut out = base.clone();
    out.budget = budget;
    for c in picked {
        let salience = (1.0 - c.score.unwrap_or(1.0)).clamp(0.0, 1.0);
        for t in &c.text {
            out.tokens.push(t.clone());
            out.salience.push(salience);
            out.origins.push(TokenOrigin::Clause);
        }
    }

    while out.tokens.len() > budget {
        let victim = last_duplicate(&out, TokenOrigin::Clause)
            .or_else(|| last_duplicate(&out, TokenOrigin::Base))
            .unwrap_or_else(|| least_salient(&out));
        out.tokens.remove(victim);
        out.salience.remove(victim);
        out.origins.remove(victim);
    }
    out
}

/// Latest token of `origin` whose text also occurs earlier in the bundle.
fn last_duplicate(b: &PromptBundle, origin: TokenOrigin) -> Option<usize> {
    (0..b.tokens.len())
        .rev()
        .find(|&i| b.origins[i] == origin && b.tokens[..i].contains(&b.tokens[i]))
}

fn least_salient(b: &PromptBundle) -> usize {
    let mut best = 0;
    for i in 1..b.tokens.len() {
        if b.salience[i] <= b.salience[best] {
            best = i;
        }
    }
    best
}
