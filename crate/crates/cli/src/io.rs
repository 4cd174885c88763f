//! Panel CSV schema, label mapping, and provenance-stamped output files.
//!
//! The on-disk layout is long format with header `i,j,t,y,x1,...,xd`. Country
//! and industry labels are arbitrary strings mapped to dense indices in order
//! of first appearance; the mapping is written next to every derived output.
//! Numeric payloads are printed with 17 significant digits so a write/read
//! cycle reproduces every `f64` bit for bit.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hpanel_core::model::{Block, PanelDataset};
use nalgebra::{DMatrix, DVector};

use crate::error::{CliError, CliResult};

/// Dense-index to label translation for both cross-sectional axes.
#[derive(Debug, Clone)]
pub struct LabelMaps {
    pub country: Vec<String>,
    pub industry: Vec<String>,
}

impl LabelMaps {
    /// Identity labels `0..l` and `0..n` used for simulated panels.
    pub fn numeric(l: usize, n: usize) -> Self {
        Self {
            country: (0..l).map(|i| i.to_string()).collect(),
            industry: (0..n).map(|j| j.to_string()).collect(),
        }
    }
}

/// A parsed panel plus everything needed to write it back unchanged.
#[derive(Debug, Clone)]
pub struct LoadedPanel {
    pub dataset: PanelDataset,
    pub labels: LabelMaps,
    /// Original period values in ascending order, one per time index.
    pub periods: Vec<i64>,
}

/// Stamp carried in the header of every output file.
#[derive(Debug, Clone, Copy)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: u64,
}

impl Provenance {
    pub fn version() -> &'static str {
        env!("CARGO_PKG_VERSION")
    }

    pub fn comment_lines(&self) -> [String; 3] {
        [
            format!("# generator: hpanel {}", Self::version()),
            format!("# seed: {}", self.seed),
            format!("# config: {:016x}", self.config_hash),
        ]
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::json!({
            "generator": format!("hpanel {}", Self::version()),
            "seed": self.seed,
            "config": format!("{:016x}", self.config_hash),
        })
    }
}

/// Formats a float with enough digits to round-trip exactly.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Quotes a CSV field only when it would otherwise change meaning.
pub fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Line-oriented output file carrying the provenance header.
pub struct OutFile {
    w: BufWriter<File>,
    path: PathBuf,
}

impl OutFile {
    pub fn create(path: &Path, prov: &Provenance) -> CliResult<OutFile> {
        let file = File::create(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut out = OutFile {
            w: BufWriter::new(file),
            path: path.to_path_buf(),
        };
        for line in prov.comment_lines() {
            out.line(&line)?;
        }
        Ok(out)
    }

    pub fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.w, "{s}").map_err(|source| CliError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush().map_err(|source| CliError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

/// Writes a JSON document with the provenance embedded by the caller.
pub fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = format!("{:#}\n", value);
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn push_label(labels: &mut Vec<String>, index: &mut HashMap<String, usize>, raw: &str) -> usize {
    if let Some(&k) = index.get(raw) {
        return k;
    }
    let k = labels.len();
    labels.push(raw.to_string());
    index.insert(raw.to_string(), k);
    k
}

/// Reads a long-format panel CSV into a dataset.
///
/// Every block must cover the same period set; order of rows is free. `#`
/// starts a comment line, so previously written files load unchanged.
pub fn load_panel_csv(path: &Path) -> CliResult<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;

    let headers = rdr
        .headers()
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?
        .clone();
    let mut fixed: HashMap<&str, usize> = HashMap::new();
    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        match name {
            "i" | "j" | "t" | "y" => {
                fixed.insert(headers.get(idx).unwrap(), idx);
            }
            _ => {
                let suffix = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok());
                match suffix {
                    Some(k) if k >= 1 => x_cols.push((k, idx)),
                    _ => {
                        return Err(CliError::Config {
                            path: path.to_path_buf(),
                            detail: format!("unexpected column `{name}`"),
                        })
                    }
                }
            }
        }
    }
    for required in ["i", "j", "t", "y"] {
        if !fixed.contains_key(required) {
            return Err(CliError::MissingColumn(required.to_string()));
        }
    }
    x_cols.sort_unstable();
    let d = x_cols.len();
    for (pos, &(k, _)) in x_cols.iter().enumerate() {
        if k != pos + 1 {
            return Err(CliError::MissingColumn(format!("x{}", pos + 1)));
        }
    }
    if d == 0 {
        return Err(CliError::MissingColumn("x1".to_string()));
    }
    let (ci, cj, ct, cy) = (fixed["i"], fixed["j"], fixed["t"], fixed["y"]);

    let mut country_labels = Vec::new();
    let mut country_index = HashMap::new();
    let mut industry_labels = Vec::new();
    let mut industry_index = HashMap::new();
    type Cells = BTreeMap<i64, (f64, Vec<f64>)>;
    let mut cells: BTreeMap<(usize, usize), Cells> = BTreeMap::new();

    for record in rdr.records() {
        let record = record.map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let row = record.position().map(|p| p.line()).unwrap_or(0);
        let bad_cell = || CliError::NonNumericCell { row };
        let t: i64 = record[ct].parse().map_err(|_| bad_cell())?;
        let y: f64 = record[cy].parse().map_err(|_| bad_cell())?;
        let mut x = Vec::with_capacity(d);
        for &(_, idx) in &x_cols {
            x.push(record[idx].parse::<f64>().map_err(|_| bad_cell())?);
        }
        let i = push_label(&mut country_labels, &mut country_index, &record[ci]);
        let j = push_label(&mut industry_labels, &mut industry_index, &record[cj]);
        let block = cells.entry((i, j)).or_default();
        if block.insert(t, (y, x)).is_some() {
            return Err(CliError::DuplicateKey {
                i: country_labels[i].clone(),
                j: industry_labels[j].clone(),
                t,
            });
        }
    }

    if cells.is_empty() {
        return Err(CliError::Config {
            path: path.to_path_buf(),
            detail: "no data rows".to_string(),
        });
    }
    let periods: Vec<i64> = cells
        .values()
        .flat_map(|block| block.keys().copied())
        .collect::<std::collections::BTreeSet<i64>>()
        .into_iter()
        .collect();
    let t_len = periods.len();

    let mut blocks = Vec::with_capacity(cells.len());
    for (&(i, j), block) in &cells {
        if block.len() != t_len || !periods.iter().all(|t| block.contains_key(t)) {
            return Err(CliError::RaggedTime {
                i: country_labels[i].clone(),
                j: industry_labels[j].clone(),
            });
        }
        let y = DVector::from_iterator(t_len, periods.iter().map(|t| block[t].0));
        let x = DMatrix::from_fn(t_len, d, |r, c| block[&periods[r]].1[c]);
        blocks.push(Block { i, j, y, x });
    }

    let dataset = PanelDataset::from_blocks(country_labels.len(), industry_labels.len(), t_len, d, blocks)?;
    dataset.validate().into_result()?;
    Ok(LoadedPanel {
        dataset,
        labels: LabelMaps {
            country: country_labels,
            industry: industry_labels,
        },
        periods,
    })
}

/// Writes a panel in the long CSV schema, blocks sorted by `(i, j)`.
pub fn write_panel_csv(
    path: &Path,
    dataset: &PanelDataset,
    labels: &LabelMaps,
    periods: &[i64],
    prov: &Provenance,
) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    let d = dataset.d();
    let mut header = String::from("i,j,t,y");
    for s in 1..=d {
        header.push_str(&format!(",x{s}"));
    }
    out.line(&header)?;
    for block in dataset.blocks() {
        let (li, lj) = (field(&labels.country[block.i]), field(&labels.industry[block.j]));
        for r in 0..dataset.t() {
            let mut row = format!("{li},{lj},{},{}", periods[r], num(block.y[r]));
            for c in 0..d {
                row.push(',');
                row.push_str(&num(block.x[(r, c)]));
            }
            out.line(&row)?;
        }
    }
    out.finish()
}

/// Writes the label-to-index mapping for both axes.
pub fn write_labels_csv(path: &Path, labels: &LabelMaps, prov: &Provenance) -> CliResult<()> {
    let mut out = OutFile::create(path, prov)?;
    out.line("axis,label,index")?;
    for (k, label) in labels.country.iter().enumerate() {
        out.line(&format!("country,{},{k}", field(label)))?;
    }
    for (k, label) in labels.industry.iter().enumerate() {
        out.line(&format!("industry,{},{k}", field(label)))?;
    }
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_separators_are_quoted() {
        assert_eq!(field("plain"), "plain");
        assert_eq!(field("a,b"), "\"a,b\"");
        assert_eq!(field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn numbers_round_trip_through_the_text_format() {
        for &x in &[0.1, -3.25e-17, 2.0 / 3.0, 1e300, 0.0] {
            let printed = num(x);
            assert_eq!(printed.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{printed}");
        }
    }
}
