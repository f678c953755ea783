//! CSV and legacy-VTK readers and writers for observations, nodal fields and
//! convergence histories.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::observation::{Observation, ObservationKind};
use crate::pdps::ResidualReport;
use crate::stepper::TimeGrid;

/// `key = value` metadata written as `#`-prefixed header lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn write<W: Write>(&self, out: &mut W, columns: &[String]) -> Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k} = {v}")?;
        }
        writeln!(out, "# columns = {}", columns.join(","))?;
        Ok(())
    }
}

fn parse_error(context: &str, message: impl ToString) -> Error {
    Error::Parse {
        context: context.to_string(),
        message: message.to_string(),
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(out)
}

fn write_rows<W: Write>(out: &mut W, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(out);
    for row in rows {
        w.write_record(&row).map_err(|e| parse_error("csv output", e))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `#` header lines and numeric rows.
fn read_table<R: Read>(input: R, context: &str) -> Result<(Header, Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = BufReader::new(input);
    let mut header = Header::new();
    let mut columns = Vec::new();
    let mut body = String::new();
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        if let Some(meta) = line.trim_end().strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                let (k, v) = (k.trim(), v.trim());
                if k == "columns" {
                    columns = v.split(',').map(str::to_string).collect();
                } else {
                    header.entries.push((k.to_string(), v.to_string()));
                }
            }
        } else {
            body.push_str(&line);
            reader.read_to_string(&mut body)?;
            break;
        }
    }
    let mut rows = Vec::new();
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    for (i, record) in csv.records().enumerate() {
        let record = record.map_err(|e| parse_error(context, e))?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| parse_error(context, format!("row {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, columns, rows))
}

fn kind_from_name(name: &str) -> Result<ObservationKind> {
    match name {
        "restriction" => Ok(ObservationKind::Restriction),
        "patch_mean" => Ok(ObservationKind::PatchMean),
        other => Err(parse_error("observation file", format!("unknown kind '{other}'"))),
    }
}

/// One row per time node: `t, channel_0, channel_1, ...`.
pub fn write_observation_csv<W: Write>(
    mut out: W,
    obs: &Observation,
    grid: &TimeGrid,
    channel_names: &[String],
    header: &Header,
) -> Result<()> {
    if obs.num_times() != grid.num_nodes() {
        return Err(Error::Dimension {
            context: "observation time nodes",
            expected: grid.num_nodes(),
            got: obs.num_times(),
        });
    }
    let header = header.clone().with("kind", obs.kind().name());
    let mut columns = vec!["t".to_string()];
    columns.extend(channel_names.iter().cloned());
    header.write(&mut out, &columns)?;
    write_rows(
        &mut out,
        obs.rows().iter().enumerate().map(|(i, row)| {
            std::iter::once(grid.time(i))
                .chain(row.iter().copied())
                .map(|v| v.to_string())
                .collect()
        }),
    )
}

pub fn read_observation_csv<R: Read>(input: R) -> Result<(Header, Observation)> {
    let (header, _, rows) = read_table(input, "observation file")?;
    let kind = kind_from_name(
        header
            .get("kind")
            .ok_or_else(|| parse_error("observation file", "missing 'kind' header"))?,
    )?;
    let width = rows.first().map_or(0, |r| r.len());
    if width < 2 || rows.iter().any(|r| r.len() != width) {
        return Err(parse_error("observation file", "ragged or empty table"));
    }
    let rows = rows.into_iter().map(|r| r[1..].to_vec()).collect();
    Ok((header, Observation::new(kind, rows)))
}

/// `x, y, value` per mesh node.
pub fn write_field_csv<W: Write>(
    mut out: W,
    mesh: &Mesh,
    name: &str,
    values: &[f64],
    header: &Header,
) -> Result<()> {
    check_field(mesh, values)?;
    header.write(&mut out, &["x".into(), "y".into(), name.into()])?;
    write_rows(
        &mut out,
        mesh.nodes()
            .iter()
            .zip(values)
            .map(|(p, v)| vec![p[0].to_string(), p[1].to_string(), v.to_string()]),
    )
}

pub fn read_field_csv<R: Read>(input: R) -> Result<(Header, Vec<[f64; 2]>, Vec<f64>)> {
    let (header, _, rows) = read_table(input, "field file")?;
    if rows.iter().any(|r| r.len() != 3) {
        return Err(parse_error("field file", "expected three columns"));
    }
    let points = rows.iter().map(|r| [r[0], r[1]]).collect();
    let values = rows.iter().map(|r| r[2]).collect();
    Ok((header, points, values))
}

fn check_field(mesh: &Mesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.num_nodes() {
        return Err(Error::Dimension {
            context: "nodal field",
            expected: mesh.num_nodes(),
            got: values.len(),
        });
    }
    Ok(())
}

/// Legacy VTK, ASCII, STRUCTURED_POINTS with one scalar per field.
pub fn write_vtk<W: Write>(mut out: W, mesh: &Mesh, title: &str, fields: &[(&str, &[f64])]) -> Result<()> {
    for (_, values) in fields {
        check_field(mesh, values)?;
    }
    let (hx, hy) = mesh.spacing();
    let d = mesh.domain();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.replace('\n', " "))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} 1", mesh.nx(), mesh.ny())?;
    writeln!(out, "ORIGIN {} {} 0", d.x[0], d.y[0])?;
    writeln!(out, "SPACING {hx} {hy} 1")?;
    writeln!(out, "POINT_DATA {}", mesh.num_nodes())?;
    for (name, values) in fields {
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in *values {
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

pub const HISTORY_COLUMNS: [&str; 6] = ["iteration", "objective", "primal", "observation", "dual", "sum"];

fn history_row(r: &ResidualReport) -> [String; 6] {
    [
        r.iteration.to_string(),
        r.objective.to_string(),
        r.primal.to_string(),
        r.observation.to_string(),
        r.dual.to_string(),
        r.sum.to_string(),
    ]
}

/// Writes history rows as they are produced, flushing after each one.
pub struct HistoryWriter<W: Write> {
    out: csv::Writer<W>,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(mut out: W, header: &Header) -> Result<Self> {
        let columns: Vec<String> = HISTORY_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.write(&mut out, &columns)?;
        Ok(Self { out: csv_writer(out) })
    }

    pub fn push(&mut self, report: &ResidualReport) -> Result<()> {
        self.out
            .write_record(history_row(report))
            .map_err(|e| parse_error("csv output", e))?;
        self.out.flush()?;
        Ok(())
    }

    pub fn finish(self) -> Result<W> {
        self.out
            .into_inner()
            .map_err(|e| parse_error("csv output", e.error().to_string()))
    }
}

pub fn write_history_csv<W: Write>(out: W, history: &[ResidualReport], header: &Header) -> Result<()> {
    let mut w = HistoryWriter::new(out, header)?;
    for r in history {
        w.push(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(input: R) -> Result<(Header, Vec<ResidualReport>)> {
    let (header, _, rows) = read_table(input, "history file")?;
    let history = rows
        .into_iter()
        .map(|r| {
            if r.len() != HISTORY_COLUMNS.len() {
                return Err(parse_error("history file", "expected six columns"));
            }
            Ok(ResidualReport {
                iteration: r[0] as usize,
                objective: r[1],
                primal: r[2],
                observation: r[3],
                dual: r[4],
                sum: r[5],
            })
        })
        .collect::<Result<_>>()?;
    Ok((header, history))
}
