//! Report envelope shared by every subcommand, with JSON and text renderings.

use serde::Serialize;
use serde_json::Value as Json;

/// A plain table: the text rendering aligns columns, the CSV rendering
/// joins them with commas.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = vec![line(&self.columns)];
        out.push(line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>()));
        out.extend(self.rows.iter().map(|r| line(r)));
        out.join("\n") + "\n"
    }

    pub fn csv(&self) -> String {
        let mut out = self.columns.join(",") + "\n";
        for row in &self.rows {
            out += &row.join(",");
            out.push('\n');
        }
        out
    }
}

/// Everything a run produced: the machine-readable results plus the text
/// rendering of the same numbers.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: Json,
    pub results: Json,
    /// Primary result table, used for CSV output.
    #[serde(skip)]
    pub table: Table,
    #[serde(skip)]
    pub text: String,
    /// Whether the run found coordination requirements, counterexamples or
    /// violations.
    #[serde(skip)]
    pub flagged: bool,
}

impl Report {
    pub fn new(command: String, seed: u64, config: Json) -> Self {
        Report {
            tool: "iconf",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config,
            results: Json::Null,
            table: Table::default(),
            text: String::new(),
            flagged: false,
        }
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize") + "\n"
    }

    pub fn render_text(&self) -> String {
        format!(
            "# {} {}  seed={}\n# {}\n\n{}",
            self.tool, self.version, self.seed, self.command, self.text
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_align_to_the_widest_cell() {
        let mut t = Table::new(&["a", "long"]);
        t.push(vec!["wide cell".into(), "x".into()]);
        let text = t.render();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "a          long");
        assert_eq!(lines[2], "wide cell  x");
        assert_eq!(t.csv(), "a,long\nwide cell,x\n");
    }
}
