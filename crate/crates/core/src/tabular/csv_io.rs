use std::fs::File;
use std::path::Path;

use super::{label_encode, ColumnKind, DataError, EncoderMap, RawColumn, RawTable, Result, Schema, Table};

/// Reads a headered UTF-8 CSV. Columns are matched to the schema by name,
/// so header order is irrelevant; unknown extra columns are ignored.
/// Row numbers in errors count data rows from 1.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| DataError::MissingColumn(name.to_owned()))
    };
    let positions: Vec<usize> = schema.columns().iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
    let label_pos = find(schema.label())?;
    let extra = headers.len() - schema.width() - 1;
    if extra > 0 {
        log::warn!("{}: ignoring {extra} column(s) not in the schema", path.display());
    }

    let mut columns: Vec<RawColumn> = schema
        .columns()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => RawColumn::Continuous(Vec::new()),
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != headers.len() {
            return Err(DataError::RowWidth { row, expected: headers.len(), found: record.len() });
        }
        for ((spec, &pos), col) in schema.columns().iter().zip(&positions).zip(columns.iter_mut()) {
            let cell = record[pos].trim();
            if cell.is_empty() {
                return Err(DataError::MissingValue { row, column: spec.name.clone() });
            }
            match col {
                RawColumn::Continuous(v) => {
                    let x: f32 = cell.parse().map_err(|_| DataError::Parse {
                        row,
                        column: spec.name.clone(),
                        value: cell.to_owned(),
                    })?;
                    if !x.is_finite() {
                        return Err(DataError::Parse { row, column: spec.name.clone(), value: cell.to_owned() });
                    }
                    v.push(x);
                }
                RawColumn::Categorical(v) => v.push(cell.to_owned()),
            }
        }
        let label = record[label_pos].trim();
        if label.is_empty() {
            return Err(DataError::MissingValue { row, column: schema.label().to_owned() });
        }
        labels.push(label.to_owned());
    }
    if labels.is_empty() {
        return Err(DataError::Empty);
    }
    log::info!("{}: loaded {} rows", path.display(), labels.len());
    Ok(RawTable { schema: schema.clone(), columns, labels })
}

/// Reads a CSV previously written by [`write_table_csv`], encoding it with an
/// existing encoder (values unseen at fit time are rejected).
pub fn read_table_csv(path: &Path, schema: &Schema, encoder: Option<&EncoderMap>) -> Result<Table> {
    let raw = load_csv(path, schema)?;
    let Some(encoder) = encoder else {
        return Ok(label_encode(&raw)?.0);
    };
    let n = raw.len();
    let width = schema.width();
    let mut features = vec![0.0f32; n * width];
    for (c, (spec, col)) in schema.columns().iter().zip(&raw.columns).enumerate() {
        for r in 0..n {
            features[r * width + c] = match col {
                RawColumn::Continuous(v) => v[r],
                RawColumn::Categorical(v) => encoder
                    .encode(&spec.name, &v[r])
                    .ok_or_else(|| DataError::Parse { row: r + 1, column: spec.name.clone(), value: v[r].clone() })?
                    as f32,
            };
        }
    }
    let labels = raw
        .labels
        .iter()
        .enumerate()
        .map(|(r, l)| {
            encoder.label.iter().position(|v| v == l).map(|p| p as u8).ok_or_else(|| DataError::Parse {
                row: r + 1,
                column: schema.label().to_owned(),
                value: l.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Table::new(schema.clone(), features, labels, Some(encoder.clone()))
}

/// Writes a table with categorical codes decoded through its encoder (raw
/// codes when it has none). `extra` appends one named string column.
pub fn write_table_csv(table: &Table, path: &Path, extra: Option<(&str, &[&str])>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = table.schema().columns().iter().map(|c| c.name.as_str()).collect();
    header.push(table.schema().label());
    if let Some((name, values)) = extra {
        if values.len() != table.len() {
            return Err(DataError::InvalidTable(format!("extra column has {} values for {} rows", values.len(), table.len())));
        }
        header.push(name);
    }
    w.write_record(&header)?;
    let enc = table.encoder();
    for i in 0..table.len() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for (spec, &v) in table.schema().columns().iter().zip(table.row(i)) {
            let cell = match spec.kind {
                ColumnKind::Continuous => format!("{v}"),
                ColumnKind::Categorical => enc
                    .and_then(|e| e.decode(&spec.name, v as u32))
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("{}", v as u32)),
            };
            record.push(cell);
        }
        let l = table.label(i);
        record.push(enc.and_then(|e| e.label.get(l as usize).cloned()).unwrap_or_else(|| l.to_string()));
        if let Some((_, values)) = extra {
            record.push(values[i].to_owned());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}
