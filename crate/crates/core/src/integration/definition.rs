//! Global schema definition files:
//! `union|generalize|specialize|import <name> = <site>.<class> [, <site>.<class> ...]`.

use super::{IntegrationError, Operator, VirtualClassDef};
use crate::schema::{fold, is_identifier, ClassRef};

fn class_ref(text: &str) -> Option<ClassRef> {
    let (site, class) = text.trim().split_once('.')?;
    (is_identifier(site) && is_identifier(class)).then(|| ClassRef::new(site, class))
}

pub fn parse_definitions(text: &str) -> Result<Vec<VirtualClassDef>, IntegrationError> {
    let mut defs: Vec<VirtualClassDef> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| IntegrationError::Definition { line: i + 1, message };
        let (head, tail) = line.split_once('=').ok_or_else(|| err("expected `=`".into()))?;
        let mut words = head.split_whitespace();
        let operator: Operator = words.next().unwrap_or("").parse().map_err(err)?;
        let name = words.next().ok_or_else(|| err("missing virtual class name".into()))?;
        if !is_identifier(name) {
            return Err(err(format!("`{name}` is not an identifier")));
        }
        if let Some(extra) = words.next() {
            return Err(err(format!("unexpected `{extra}`")));
        }
        let constituents = tail
            .split(',')
            .map(|c| class_ref(c).ok_or_else(|| err(format!("expected <site>.<class>, found `{}`", c.trim()))))
            .collect::<Result<Vec<_>, _>>()?;
        if defs.iter().any(|d| fold(&d.name) == fold(name)) {
            return Err(IntegrationError::DuplicateName(name.to_string()));
        }
        defs.push(VirtualClassDef::new(name, operator, constituents));
    }
    Ok(defs)
}

pub fn print_definitions(defs: &[VirtualClassDef]) -> String {
    defs.iter()
        .map(|d| {
            let cs: Vec<String> = d.constituents.iter().map(ToString::to_string).collect();
            format!("{} {} = {}\n", d.operator, d.name, cs.join(", "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let text = "# global schema\nunion employees = A.employees, B.employees\nimport ug = A.UGStudents\n";
        let defs = parse_definitions(text).unwrap();
        assert_eq!(defs.len(), 2);
        assert_eq!(defs[0].operator, Operator::Union);
        assert_eq!(defs[0].constituents[1], ClassRef::new("B", "employees"));
        assert_eq!(parse_definitions(&print_definitions(&defs)).unwrap(), defs);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(parse_definitions("merge x = A.b"), Err(IntegrationError::Definition { line: 1, .. })));
        assert!(matches!(parse_definitions("\nunion x = A"), Err(IntegrationError::Definition { line: 2, .. })));
        assert!(matches!(parse_definitions("union x A.b"), Err(IntegrationError::Definition { .. })));
        let dup = parse_definitions("import x = A.b\nimport X = A.c");
        assert_eq!(dup, Err(IntegrationError::DuplicateName("X".into())));
    }
}
