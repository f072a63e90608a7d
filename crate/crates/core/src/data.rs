//! Long-format randomized-response tables.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::design::{RRAssignment, RRDesignKind};
use crate::error::{Error, Result};

/// Field values treated as missing.
pub const NA_TOKENS: [&str; 3] = ["", "NA", "na"];

pub fn is_na(field: &str) -> bool {
    NA_TOKENS.contains(&field.trim())
}

/// One named column. Every value is kept as text; `numeric` is present when
/// all non-missing values parse as numbers (missing values become NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub raw: Vec<String>,
    pub numeric: Option<Vec<f64>>,
}

impl Column {
    pub fn new(name: impl Into<String>, raw: Vec<String>) -> Self {
        let numeric = raw
            .iter()
            .map(|v| {
                if is_na(v) {
                    Some(f64::NAN)
                } else {
                    v.trim().parse::<f64>().ok()
                }
            })
            .collect::<Option<Vec<f64>>>();
        Column {
            name: name.into(),
            raw,
            numeric,
        }
    }

    pub fn from_numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            raw: values.iter().map(|v| v.to_string()).collect(),
            numeric: Some(values),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    fn select(&self, rows: &[usize]) -> Column {
        Column {
            name: self.name.clone(),
            raw: rows.iter().map(|&i| self.raw[i].clone()).collect(),
            numeric: self
                .numeric
                .as_ref()
                .map(|v| rows.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Which source columns play the special roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub response: String,
    pub rr_model: String,
    pub p1: String,
    pub p2: String,
    pub item: Option<String>,
    pub group: Option<String>,
}

impl ColumnRoles {
    pub fn new(response: &str, rr_model: &str, p1: &str, p2: &str) -> Self {
        ColumnRoles {
            response: response.into(),
            rr_model: rr_model.into(),
            p1: p1.into(),
            p2: p2.into(),
            item: None,
            group: None,
        }
    }

    pub fn with_item(mut self, item: &str) -> Self {
        self.item = Some(item.into());
        self
    }

    pub fn with_group(mut self, group: &str) -> Self {
        self.group = Some(group.into());
        self
    }
}

/// Column roles plus the model variables whose missing values drop a row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadSchema {
    pub roles: ColumnRoles,
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NaPolicy {
    /// Drop every row with a missing value in a referenced variable.
    #[default]
    Omit,
}

/// A loaded table whose rows all carry a usable randomized-response design.
#[derive(Debug, Clone, PartialEq)]
pub struct RRDataset {
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    roles: ColumnRoles,
    response: Vec<f64>,
    assignments: Vec<RRAssignment>,
}

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub dataset: RRDataset,
    pub dropped: usize,
}

impl RRDataset {
    /// Builds a dataset from complete columns, validating the special roles.
    pub fn from_columns(columns: Vec<Column>, roles: ColumnRoles) -> Result<Self> {
        let n = columns.first().map_or(0, Column::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Data("columns have unequal lengths".into()));
        }
        let index: HashMap<String, usize> = columns
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect();
        let mut ds = RRDataset {
            columns,
            index,
            roles,
            response: Vec::new(),
            assignments: Vec::new(),
        };
        let rows: Vec<usize> = (0..n).collect();
        let (response, assignments) = ds.parse_special(&rows)?;
        ds.response = response;
        ds.assignments = assignments;
        Ok(ds)
    }

    fn parse_special(&self, rows: &[usize]) -> Result<(Vec<f64>, Vec<RRAssignment>)> {
        let resp = self.column(&self.roles.response)?;
        let model = self.column(&self.roles.rr_model)?;
        let p1 = self.column(&self.roles.p1)?;
        let p2 = self.column(&self.roles.p2)?;
        let mut response = Vec::with_capacity(rows.len());
        let mut assignments = Vec::with_capacity(rows.len());
        for &i in rows {
            response.push(parse_response(&resp.raw[i], i, &resp.name)?);
            assignments.push(parse_assignment(
                &model.raw[i],
                &p1.raw[i],
                &p2.raw[i],
                i,
                &self.roles,
            )?);
        }
        Ok((response, assignments))
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn roles(&self) -> &ColumnRoles {
        &self.roles
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn assignments(&self) -> &[RRAssignment] {
        &self.assignments
    }

    /// Item label per row, when an item column is configured.
    pub fn item_labels(&self) -> Option<Vec<String>> {
        let name = self.roles.item.as_ref()?;
        self.column(name).ok().map(|c| c.raw.clone())
    }

    /// Keeps only `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RRDataset {
        RRDataset {
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            index: self.index.clone(),
            roles: self.roles.clone(),
            response: rows.iter().map(|&i| self.response[i]).collect(),
            assignments: rows.iter().map(|&i| self.assignments[i]).collect(),
        }
    }

    /// Writes the table as comma-separated values with a header row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows() {
            w.write_record(self.columns.iter().map(|c| c.raw[i].as_str()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn parse_response(field: &str, row: usize, column: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v == 0.0 || v == 1.0 => Ok(v),
        _ => Err(Error::Cell {
            row: row + 1,
            column: column.to_string(),
            message: format!("response must be 0, 1 or missing, found `{field}`"),
        }),
    }
}

fn parse_probability(field: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Cell {
        row: row + 1,
        column: column.to_string(),
        message: format!("cannot parse `{field}` as a probability"),
    })
}

fn parse_assignment(
    model: &str,
    p1: &str,
    p2: &str,
    row: usize,
    roles: &ColumnRoles,
) -> Result<RRAssignment> {
    let cell = |column: &str, message: String| Error::Cell {
        row: row + 1,
        column: column.to_string(),
        message,
    };
    let kind: RRDesignKind = model
        .trim()
        .parse()
        .map_err(|e: Error| cell(&roles.rr_model, e.to_string()))?;
    let p1v = parse_probability(p1, row, &roles.p1)?;
    let p2v = if kind.uses_p2() || !is_na(p2) {
        parse_probability(p2, row, &roles.p2)?
    } else {
        0.0
    };
    let a = RRAssignment::new(kind, p1v, p2v).map_err(|e| cell(&roles.p1, e.to_string()))?;
    if a.is_degenerate() {
        return Err(cell(
            &roles.rr_model,
            format!("{kind} design ({p1v} | {p2v}) has d = 0 and cannot be used for estimation"),
        ));
    }
    Ok(a)
}

/// Reads a delimited table with a header row and applies the missing-data
/// policy to every variable referenced by `schema`.
pub fn load_table<R: Read>(
    source: R,
    schema: &LoadSchema,
    policy: NaPolicy,
) -> Result<LoadedTable> {
    let NaPolicy::Omit = policy;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
    for record in reader.records() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            raw[j].push(field.to_string());
        }
    }
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    let roles = &schema.roles;
    let mut referenced = vec![
        position(&roles.response)?,
        position(&roles.rr_model)?,
        position(&roles.p1)?,
    ];
    let p2_col = position(&roles.p2)?;
    for name in roles
        .item
        .iter()
        .chain(roles.group.iter())
        .chain(schema.covariates.iter())
    {
        referenced.push(position(name)?);
    }
    let model_col = position(&roles.rr_model)?;

    let n = raw.first().map_or(0, Vec::len);
    let keep: Vec<usize> = (0..n)
        .filter(|&i| {
            if referenced.iter().any(|&j| is_na(&raw[j][i])) {
                return false;
            }
            // p2 only matters for designs that use it
            let uses_p2 = raw[model_col][i]
                .trim()
                .parse::<RRDesignKind>()
                .map_or(true, |k| k.uses_p2());
            !(uses_p2 && is_na(&raw[p2_col][i]))
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::Data(format!(
            "all {n} rows were dropped by the missing-data policy"
        )));
    }
    let dropped = n - keep.len();

    let columns: Vec<Column> = header
        .iter()
        .zip(raw)
        .map(|(name, values)| {
            Column::new(
                name.clone(),
                keep.iter().map(|&i| values[i].clone()).collect(),
            )
        })
        .collect();
    let dataset = RRDataset::from_columns(columns, roles.clone()).map_err(|e| match e {
        // report positions in terms of the source file
        Error::Cell {
            row,
            column,
            message,
        } => Error::Cell {
            row: keep[row - 1] + 1,
            column,
            message,
        },
        other => other,
    })?;
    if dropped > 0 {
        log::info!("{dropped} observations deleted due to missingness");
    }
    Ok(LoadedTable { dataset, dropped })
}
