//! Result rendering: an aligned table, or tab-separated values with `\N`
//! for null.

use super::QueryResult;
use crate::value::Value;

fn cells(result: &QueryResult) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&result.date_formats)
                .map(|(v, f)| if v.is_null() { String::new() } else { v.render(*f) })
                .collect()
        })
        .collect()
}

pub fn render_table(result: &QueryResult) -> String {
    let body = cells(result);
    let mut widths: Vec<usize> = result.header.iter().map(|h| h.chars().count()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let padded: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("{}\n", padded.join("  ").trim_end())
    };
    let mut out = line(&result.header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&line(&rule));
    for row in &body {
        out.push_str(&line(row));
    }
    out
}

fn tsv_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

pub fn render_tsv(result: &QueryResult) -> String {
    let mut out = result.header.join("\t");
    out.push('\n');
    for row in &result.rows {
        let fields: Vec<String> = row
            .iter()
            .zip(&result.date_formats)
            .map(|(v, f)| match v {
                Value::Null => "\\N".to_string(),
                v => tsv_escape(&v.render(*f)),
            })
            .collect();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value::{parse_date, DateFormat, SemanticType};

    fn result() -> QueryResult {
        let (d, f) = parse_date("30/01/68").unwrap();
        QueryResult {
            header: vec!["Id".into(), "DOB".into(), "phone".into()],
            types: vec![SemanticType::integer(), SemanticType::date(), SemanticType::integer()],
            rows: vec![vec![Value::Integer(3), Value::Date(d), Value::Null]],
            warnings: vec![],
            date_formats: vec![DateFormat::Iso, f, DateFormat::Iso],
        }
    }

    #[test]
    fn table_and_tsv() {
        assert_eq!(render_table(&result()), "Id  DOB       phone\n--  --------  -----\n3   30/01/68\n");
        assert_eq!(render_tsv(&result()), "Id\tDOB\tphone\n3\t30/01/68\t\\N\n");
    }
}
