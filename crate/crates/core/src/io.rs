//! On-disk feature formats.
//!
//! `FMX1` binary layout (all integers little-endian):
//!
//! ```text
//! b"FMX1" | n: u32 | d: u32 | K: u32 | flags: u8
//! n*d f32 features, row-major
//! [n u32 labels]       if flags & 1
//! [n u8 domain tags]   if flags & 2   (0 source_like, 1 target_like, 2 unknown)
//! ```
//!
//! CSV layout: optional `# classes=K` comment line, a header `f0,..,f{d-1}[,label]`,
//! then one sample per row. Without the comment line the class count is taken
//! from the caller's hint, else `max(label) + 1` (at least 2).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{DomainTag, FeatureSet, Matrix};
use crate::error::{Error, Result};

pub const FMX_MAGIC: &[u8; 4] = b"FMX1";
const FLAG_LABELS: u8 = 1;
const FLAG_TAGS: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Binary,
    /// CSV with an optional class-count hint used when the file carries none.
    Csv { classes: Option<usize> },
}

impl FileFormat {
    /// `.csv` selects CSV, anything else the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv { classes: None },
            _ => FileFormat::Binary,
        }
    }
}

pub fn load_feature_set(path: impl AsRef<Path>, format: FileFormat) -> Result<FeatureSet> {
    let path = path.as_ref();
    match format {
        FileFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_fmx(&bytes)
        }
        FileFormat::Csv { classes } => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv(&text, classes)
        }
    }
}

/// Writes CSV when the path ends in `.csv`, `FMX1` otherwise.
pub fn save_feature_set(fs_: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if fs_.n() == 0 {
        return Err(Error::EmptySet);
    }
    let bytes = match FileFormat::from_path(path) {
        FileFormat::Binary => encode_fmx(fs_),
        FileFormat::Csv { .. } => render_csv(fs_).into_bytes(),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_fmx(fs_: &FeatureSet) -> Vec<u8> {
    let (n, d) = (fs_.n(), fs_.d());
    let mut out = Vec::with_capacity(17 + n * d * 4 + n * 5);
    out.extend_from_slice(FMX_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(fs_.classes() as u32).to_le_bytes());
    let mut flags = 0u8;
    if fs_.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if fs_.tags().is_some() {
        flags |= FLAG_TAGS;
    }
    out.push(flags);
    for &v in fs_.features().as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(labels) = fs_.labels() {
        for &l in labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
    }
    if let Some(tags) = fs_.tags() {
        out.extend(tags.iter().map(|t| t.to_byte()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + len)?;
        self.pos += len;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode_fmx(bytes: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader { bytes, pos: 0 };
    let header_err = |what: &str| Error::MalformedHeader(what.to_string());
    if r.take(4) != Some(FMX_MAGIC.as_slice()) {
        return Err(header_err("missing FMX1 magic"));
    }
    let n = r.u32().ok_or_else(|| header_err("truncated n"))? as usize;
    let d = r.u32().ok_or_else(|| header_err("truncated d"))? as usize;
    let classes = r.u32().ok_or_else(|| header_err("truncated K"))? as usize;
    let flags = r.take(1).ok_or_else(|| header_err("truncated flags"))?[0];
    if flags & !(FLAG_LABELS | FLAG_TAGS) != 0 {
        return Err(Error::MalformedHeader(format!("unknown flag bits {flags:#04x}")));
    }
    if n == 0 {
        return Err(Error::EmptySet);
    }
    if d == 0 {
        return Err(header_err("d = 0"));
    }
    if classes < 2 {
        return Err(Error::InvalidClassCount(classes));
    }

    let mut data = Vec::with_capacity(n * d);
    for row in 0..n {
        let chunk = r.take(d * 4).ok_or_else(|| Error::DimensionMismatch {
            row,
            expected: d,
            found: (bytes.len().saturating_sub(r.pos)) / 4,
        })?;
        for b in chunk.chunks_exact(4) {
            let v = f32::from_le_bytes(b.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row });
            }
            data.push(v as f64);
        }
    }
    let labels = if flags & FLAG_LABELS != 0 {
        let mut labels = Vec::with_capacity(n);
        for row in 0..n {
            let l = r.u32().ok_or_else(|| {
                Error::MalformedHeader(format!("label block truncated at row {row}"))
            })? as usize;
            if l >= classes {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: l,
                    classes,
                });
            }
            labels.push(l);
        }
        Some(labels)
    } else {
        None
    };
    let tags = if flags & FLAG_TAGS != 0 {
        let block = r
            .take(n)
            .ok_or_else(|| header_err("domain-tag block truncated"))?;
        let tags = block
            .iter()
            .enumerate()
            .map(|(row, &b)| {
                DomainTag::from_byte(b)
                    .ok_or_else(|| Error::MalformedHeader(format!("row {row}: bad domain tag {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(tags)
    } else {
        None
    };
    if r.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    FeatureSet::with_tags(Matrix::from_vec(n, d, data)?, labels, classes, tags)
}

pub fn render_csv(fs_: &FeatureSet) -> String {
    let mut out = format!("# classes={}\n", fs_.classes());
    let mut header: Vec<String> = (0..fs_.d()).map(|j| format!("f{j}")).collect();
    if fs_.labels().is_some() {
        header.push("label".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..fs_.n() {
        let mut cells: Vec<String> = fs_.row(i).iter().map(|&v| (v as f32).to_string()).collect();
        if let Some(labels) = fs_.labels() {
            cells.push(labels[i].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str, classes_hint: Option<usize>) -> Result<FeatureSet> {
    let mut declared = None;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    while let Some(line) = lines.peek() {
        let Some(comment) = line.trim().strip_prefix('#') else {
            break;
        };
        if let Some(v) = comment.trim().strip_prefix("classes=") {
            declared = Some(v.trim().parse::<usize>().map_err(|_| {
                Error::MalformedHeader(format!("bad class-count directive {line:?}"))
            })?);
        }
        lines.next();
    }
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("missing header row".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = names.last() == Some(&"label");
    let d = names.len() - usize::from(has_label);
    if d == 0 {
        return Err(Error::MalformedHeader("no feature columns".into()));
    }
    for (j, name) in names[..d].iter().enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::MalformedHeader(format!(
                "column {j} is {name:?}, expected \"f{j}\""
            )));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0usize;
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::DimensionMismatch {
                row,
                expected: names.len(),
                found: cells.len(),
            });
        }
        for cell in &cells[..d] {
            // Disk precision is f32 in both formats.
            let v: f32 = cell.parse().map_err(|_| Error::Parse {
                row,
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row });
            }
            data.push(f64::from(v));
        }
        if has_label {
            let l: usize = cells[d].parse().map_err(|_| Error::Parse {
                row,
                value: cells[d].to_string(),
            })?;
            labels.push(l);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptySet);
    }
    let classes = declared
        .or(classes_hint)
        .unwrap_or_else(|| labels.iter().max().map_or(2, |&m| (m + 1).max(2)));
    let labels = has_label.then_some(labels);
    FeatureSet::new(Matrix::from_vec(n, d, data)?, labels, classes)
}
