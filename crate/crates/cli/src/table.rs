//! The one table shape every subcommand emits: named columns over rows of
//! integers and floats, rendered as TSV or JSON and parseable back to a
//! value-identical table.
//!
//! Floats print as the shortest decimal that round-trips, with a forced
//! `.0` on integral values so the integer/float distinction survives
//! re-parsing.

use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(u64),
    Float(f64),
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Int(n) => n.to_string(),
            Value::Float(x) => render_float(*x),
        }
    }
}

fn render_float(x: f64) -> String {
    let s = format!("{x}");
    if s.contains('.') || s.contains('e') || s.contains('E') || s.contains("inf") || s.contains("NaN")
    {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Clamps every float in the named column to `[0, 1]`.
    pub fn clamp_column(&mut self, name: &str) {
        if let Some(pos) = self.columns.iter().position(|c| c == name) {
            for row in &mut self.rows {
                if let Value::Float(x) = &mut row[pos] {
                    *x = x.clamp(0.0, 1.0);
                }
            }
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Value::render).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty table")?;
        let columns: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for cell in line.split('\t') {
                row.push(parse_cell(cell).map_err(|e| format!("line {}: {e}", lineno + 2))?);
            }
            if row.len() != columns.len() {
                return Err(format!("line {}: wrong arity", lineno + 2));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                serde_json::Value::Array(
                    row.iter()
                        .map(|v| match v {
                            Value::Int(n) => json!(n),
                            Value::Float(x) => json!(x),
                        })
                        .collect(),
                )
            })
            .collect();
        serde_json::to_string_pretty(&json!({
            "columns": self.columns,
            "rows": rows,
        }))
        .expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let columns = value["columns"]
            .as_array()
            .ok_or("missing columns")?
            .iter()
            .map(|c| c.as_str().map(str::to_string).ok_or("bad column name"))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for row in value["rows"].as_array().ok_or("missing rows")? {
            let cells = row.as_array().ok_or("bad row")?;
            let mut out = Vec::new();
            for cell in cells {
                if let Some(n) = cell.as_u64() {
                    out.push(Value::Int(n));
                } else if let Some(x) = cell.as_f64() {
                    out.push(Value::Float(x));
                } else {
                    return Err(format!("bad cell {cell}"));
                }
            }
            rows.push(out);
        }
        Ok(Self { columns, rows })
    }
}

fn parse_cell(cell: &str) -> Result<Value, String> {
    let float_like = cell.contains(['.', 'e', 'E']) || cell == "inf" || cell == "-inf";
    if !float_like {
        if let Ok(n) = cell.parse::<u64>() {
            return Ok(Value::Int(n));
        }
    }
    cell.parse::<f64>()
        .map(Value::Float)
        .map_err(|_| format!("cell {cell:?} is not a number"))
}
