//! Record patterns such as `Age=2,Edu>=3` compiled to dummy constraints.

use std::collections::BTreeMap;

use grasscat::schema::{VariableKind, VariableSchema};

use crate::error::{CliError, CliResult};

/// Fixed dummy values; `None` when the pattern contradicts itself.
pub type Pattern = Option<BTreeMap<usize, bool>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Eq,
    Ge,
    Le,
}

fn parse_term(term: &str) -> CliResult<(&str, Op, usize)> {
    let (name, op, rest) = if let Some((n, r)) = term.split_once(">=") {
        (n, Op::Ge, r)
    } else if let Some((n, r)) = term.split_once("<=") {
        (n, Op::Le, r)
    } else if let Some((n, r)) = term.split_once('=') {
        (n, Op::Eq, r)
    } else {
        return Err(CliError::invalid(format!("`{term}`: expected Var=l, Var>=l or Var<=l")));
    };
    let level = rest
        .trim()
        .parse()
        .map_err(|_| CliError::invalid(format!("`{term}`: level must be a nonnegative integer")))?;
    Ok((name.trim(), op, level))
}

/// Compile a comma-separated pattern. Categorical `Var=l` fixes the one-hot
/// bit (all bits zero for `l = 0`); ordinal `Var>=l` fixes bit `l` of the
/// cumulative prefix and `Var<=l` clears the next one.
pub fn compile(schema: &VariableSchema, text: &str) -> CliResult<Pattern> {
    let mut fixed: BTreeMap<usize, bool> = BTreeMap::new();
    let mut contradiction = false;
    let mut set = |i: usize, v: bool| match fixed.insert(i, v) {
        Some(old) if old != v => contradiction = true,
        _ => {}
    };
    for term in text.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let (name, op, level) = parse_term(term)?;
        let j = schema
            .index_of(name)
            .ok_or_else(|| CliError::invalid(format!("`{term}`: unknown variable `{name}`")))?;
        let var = &schema.variables()[j];
        if level >= var.levels {
            return Err(CliError::invalid(format!(
                "`{term}`: level {level} out of range 0..={}",
                var.levels - 1
            )));
        }
        let start = schema.block(j).start;
        let last = var.levels - 1;
        match (var.kind, op) {
            (VariableKind::Categorical, Op::Eq) => {
                if level == 0 {
                    for i in schema.block(j) {
                        set(i, false);
                    }
                } else {
                    set(start + level - 1, true);
                }
            }
            (VariableKind::Categorical, _) => {
                return Err(CliError::invalid(format!("`{term}`: `{name}` is categorical; use `=`")))
            }
            (VariableKind::Ordinal, _) => {
                if matches!(op, Op::Ge | Op::Eq) && level > 0 {
                    set(start + level - 1, true);
                }
                if matches!(op, Op::Le | Op::Eq) && level < last {
                    set(start + level, false);
                }
            }
        }
    }
    Ok((!contradiction).then_some(fixed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use grasscat::schema::VariableDecl;

    fn schema() -> VariableSchema {
        VariableSchema::new(vec![
            VariableDecl::categorical("Sex", 2),
            VariableDecl::categorical("Age", 3),
            VariableDecl::ordinal("Edu", 4),
        ])
        .unwrap()
    }

    #[test]
    fn categorical_and_ordinal_terms() {
        let s = schema();
        let p = compile(&s, "Age=2, Edu>=3").unwrap().unwrap();
        assert_eq!(p.into_iter().collect::<Vec<_>>(), vec![(2, true), (5, true)]);
        let p = compile(&s, "Age=0").unwrap().unwrap();
        assert_eq!(p.into_iter().collect::<Vec<_>>(), vec![(1, false), (2, false)]);
        let p = compile(&s, "Edu=1").unwrap().unwrap();
        assert_eq!(p.into_iter().collect::<Vec<_>>(), vec![(3, true), (4, false)]);
        assert!(compile(&s, "Edu>=0").unwrap().unwrap().is_empty());
    }

    #[test]
    fn contradictions_and_errors() {
        let s = schema();
        assert!(compile(&s, "Edu>=2,Edu<=1").unwrap().is_none());
        assert!(compile(&s, "Age>=1").is_err());
        assert!(compile(&s, "Nope=1").is_err());
        assert!(compile(&s, "Age=3").is_err());
        assert!(compile(&s, "Age").is_err());
    }
}
