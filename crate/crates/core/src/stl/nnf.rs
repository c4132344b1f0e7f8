use std::collections::HashMap;

use super::{Formula, FormulaKind, Polarity, Predicate, StlError};

/// `l U[a,b] r` as `OR_{τ=a..b} (F[τ,τ] r & G[0,τ] l)`.
pub fn expand_until(left: &Formula, right: &Formula, a: usize, b: usize) -> Formula {
    Formula::or(
        (a..=b)
            .map(|tau| {
                Formula::and(vec![
                    Formula::eventually(right.clone(), tau, tau),
                    Formula::always(left.clone(), 0, tau),
                ])
            })
            .collect(),
    )
}

/// Pushes negations onto predicates, recording them as polarity.
pub fn to_nnf(f: &Formula) -> Formula {
    nnf(f, false)
}

fn nnf(f: &Formula, neg: bool) -> Formula {
    match f.kind() {
        FormulaKind::True => {
            if neg {
                Formula::or(vec![])
            } else {
                Formula::truth()
            }
        }
        FormulaKind::Pred(p) => {
            let mut p = p.clone();
            if neg {
                p.polarity = p.polarity.flip();
            }
            Formula::pred(p)
        }
        FormulaKind::Not(g) => nnf(g, !neg),
        FormulaKind::And(v) => {
            let parts = v.iter().map(|g| nnf(g, neg)).collect();
            if neg {
                Formula::or(parts)
            } else {
                Formula::and(parts)
            }
        }
        FormulaKind::Or(v) => {
            let parts = v.iter().map(|g| nnf(g, neg)).collect();
            if neg {
                Formula::and(parts)
            } else {
                Formula::or(parts)
            }
        }
        FormulaKind::Eventually { inner, a, b } => {
            let g = nnf(inner, neg);
            if neg {
                Formula::always(g, *a, *b)
            } else {
                Formula::eventually(g, *a, *b)
            }
        }
        FormulaKind::Always { inner, a, b } => {
            let g = nnf(inner, neg);
            if neg {
                Formula::eventually(g, *a, *b)
            } else {
                Formula::always(g, *a, *b)
            }
        }
        FormulaKind::Until { left, right, a, b } => {
            if neg {
                nnf(&expand_until(left, right, *a, *b), true)
            } else {
                Formula::until(nnf(left, false), nnf(right, false), *a, *b)
            }
        }
    }
}

pub fn is_nnf(f: &Formula) -> bool {
    !matches!(f.kind(), FormulaKind::Not(_)) && f.children().into_iter().all(is_nnf)
}

/// Predicate occurrences of an NNF formula in document order.
pub fn collect_predicates(f: &Formula) -> Vec<(Predicate, Polarity)> {
    let mut out = Vec::new();
    f.visit_predicates(&mut |p| out.push((p.clone(), p.polarity)));
    out
}

/// Rejects a set of formulas in which some predicate occurs both plain and
/// negated (after normalization).
pub fn check_assumption1<'a>(formulas: impl IntoIterator<Item = &'a Formula>) -> Result<(), StlError> {
    let mut seen: HashMap<_, (Polarity, Predicate)> = HashMap::new();
    for f in formulas {
        for (p, pol) in collect_predicates(&to_nnf(f)) {
            match seen.get(&p.key()) {
                Some((other, _)) if *other != pol => {
                    let mut shown = p.clone();
                    shown.polarity = Polarity::Positive;
                    return Err(StlError::Assumption1(Formula::pred(shown).to_string()));
                }
                Some(_) => {}
                None => {
                    seen.insert(p.key(), (pol, p));
                }
            }
        }
    }
    Ok(())
}
