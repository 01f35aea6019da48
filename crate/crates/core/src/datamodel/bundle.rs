//! Directory bundle format.
//!
//! ```text
//! meta.txt       key=value lines
//! features.bin   "GZSB" u16 version, u32 rows, u32 cols, rows*cols f32 (LE, row-major)
//! semantics.bin  same layout as features.bin, one row per class id
//! labels.bin     "GZSL" u32 count, count u32 class ids (LE)
//! split.txt      [seen] [unseen] [train] [test_seen] [test_unseen] sections
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ClassId, Dataset, SplitSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub const MATRIX_MAGIC: &[u8; 4] = b"GZSB";
pub const LABELS_MAGIC: &[u8; 4] = b"GZSL";
pub const BUNDLE_VERSION: u16 = 1;

const META: &str = "meta.txt";
const FEATURES: &str = "features.bin";
const SEMANTICS: &str = "semantics.bin";
const LABELS: &str = "labels.bin";
const SPLIT: &str = "split.txt";
const SECTIONS: [&str; 5] = ["seen", "unseen", "train", "test_seen", "test_unseen"];

/// Writes `dataset` as a bundle directory, creating it if needed.
///
/// Values are stored as 32-bit floats; a dataset whose values are exactly
/// representable in `f32` round-trips bit-for-bit through [`load_bundle`].
pub fn save_bundle<T: Scalar>(dataset: &Dataset<T>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    dataset.validate().into_result()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_matrix(&dir.join(FEATURES), &dataset.features)?;
    write_matrix(&dir.join(SEMANTICS), &dataset.semantics)?;
    write_labels(&dir.join(LABELS), &dataset.labels)?;
    write_text(&dir.join(SPLIT), &render_split(&dataset.split))?;
    write_text(&dir.join(META), &render_meta(dataset))?;
    Ok(())
}

/// Reads and validates a bundle directory.
pub fn load_bundle<T: Scalar>(dir: impl AsRef<Path>) -> Result<Dataset<T>> {
    let dir = dir.as_ref();
    let meta = parse_meta(&read_text(&dir.join(META))?)?;
    let features = read_matrix::<T>(&dir.join(FEATURES))?;
    let semantics = read_matrix::<T>(&dir.join(SEMANTICS))?;
    let labels = read_labels(&dir.join(LABELS))?;
    let split = parse_split(&read_text(&dir.join(SPLIT))?)?;

    let expect = |key: &'static str, found: usize| -> Result<()> {
        let want = meta_usize(&meta, key)?;
        if want != found {
            return Err(Error::format(
                META,
                format!("{key}={want} but data has {found}"),
            ));
        }
        Ok(())
    };
    expect("m", features.cols())?;
    expect("n", semantics.cols())?;
    expect("instances", features.rows())?;
    expect("instances", labels.len())?;
    expect("classes", semantics.rows())?;
    expect("train", split.train_idx.len())?;
    expect("test_seen", split.test_seen_idx.len())?;
    expect("test_unseen", split.test_unseen_idx.len())?;

    let semantic_scale = match meta.get("semantic_scale") {
        Some(v) => v
            .parse::<f64>()
            .map_err(|_| Error::format(META, format!("semantic_scale: cannot parse {v:?}")))?,
        None => 1.0,
    };

    let dataset = Dataset {
        features,
        labels,
        semantics,
        split,
        semantic_scale,
    };
    dataset.validate().into_result()?;
    Ok(dataset)
}

fn render_meta<T: Scalar>(d: &Dataset<T>) -> String {
    format!(
        "format_version={BUNDLE_VERSION}\nm={}\nn={}\ninstances={}\nclasses={}\nseen_classes={}\nunseen_classes={}\ntrain={}\ntest_seen={}\ntest_unseen={}\nsemantic_scale={}\n",
        d.feature_dim(),
        d.semantic_dim(),
        d.num_instances(),
        d.num_classes(),
        d.split.seen_classes.len(),
        d.split.unseen_classes.len(),
        d.split.train_idx.len(),
        d.split.test_seen_idx.len(),
        d.split.test_unseen_idx.len(),
        d.semantic_scale,
    )
}

fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::format(META, format!("line {}: expected key=value", lineno + 1))
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

fn meta_usize(meta: &BTreeMap<String, String>, key: &'static str) -> Result<usize> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::format(META, format!("missing key {key}")))?;
    v.parse()
        .map_err(|_| Error::format(META, format!("{key}: cannot parse {v:?}")))
}

fn render_split(split: &SplitSpec) -> String {
    fn section(out: &mut String, name: &str, items: impl Iterator<Item = usize>) {
        out.push('[');
        out.push_str(name);
        out.push_str("]\n");
        let items: Vec<String> = items.map(|i| i.to_string()).collect();
        for chunk in items.chunks(20) {
            out.push_str(&chunk.join(" "));
            out.push('\n');
        }
    }
    let mut out = String::new();
    section(&mut out, "seen", split.seen_classes.iter().map(|c| c.index()));
    section(&mut out, "unseen", split.unseen_classes.iter().map(|c| c.index()));
    section(&mut out, "train", split.train_idx.iter().copied());
    section(&mut out, "test_seen", split.test_seen_idx.iter().copied());
    section(&mut out, "test_unseen", split.test_unseen_idx.iter().copied());
    out
}

fn parse_split(text: &str) -> Result<SplitSpec> {
    let mut sections: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = SECTIONS
                .iter()
                .find(|s| **s == name)
                .ok_or_else(|| Error::format(SPLIT, format!("unknown section [{name}]")))?;
            if sections.insert(name, Vec::new()).is_some() {
                return Err(Error::format(SPLIT, format!("section [{name}] repeated")));
            }
            current = Some(name);
            continue;
        }
        let name = current.ok_or_else(|| {
            Error::format(SPLIT, format!("line {}: values before any section", lineno + 1))
        })?;
        let list = sections.get_mut(name).expect("section inserted on header");
        for tok in line.split_whitespace() {
            let v = tok.parse::<usize>().map_err(|_| {
                Error::format(SPLIT, format!("line {}: [{name}] bad integer {tok:?}", lineno + 1))
            })?;
            list.push(v);
        }
    }
    let mut take = |name: &str| {
        sections
            .remove(name)
            .ok_or_else(|| Error::format(SPLIT, format!("missing section [{name}]")))
    };
    let to_classes = |v: Vec<usize>| -> Result<_> {
        v.into_iter()
            .map(|c| {
                u32::try_from(c)
                    .map(ClassId)
                    .map_err(|_| Error::format(SPLIT, format!("class id {c} exceeds u32")))
            })
            .collect()
    };
    Ok(SplitSpec {
        seen_classes: to_classes(take("seen")?)?,
        unseen_classes: to_classes(take("unseen")?)?,
        train_idx: take("train")?,
        test_seen_idx: take("test_seen")?,
        test_unseen_idx: take("test_unseen")?,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_matrix<T: Scalar>(path: &Path, m: &Matrix<T>) -> Result<()> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::format(file_name(path), "too many rows"))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::format(file_name(path), "too many cols"))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(MATRIX_MAGIC)?;
        w.write_u16::<LittleEndian>(BUNDLE_VERSION)?;
        w.write_u32::<LittleEndian>(rows)?;
        w.write_u32::<LittleEndian>(cols)?;
        for &x in m.as_slice() {
            w.write_f32::<LittleEndian>(x.to_f32().unwrap_or(f32::NAN))?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn read_header(r: &mut impl Read, path: &Path, magic: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|e| Error::io(path, e))?;
    if &got != magic {
        return Err(Error::format(
            file_name(path),
            format!(
                "magic mismatch: expected {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&got)
            ),
        ));
    }
    Ok(())
}

fn read_matrix<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let name = file_name(path);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header(&mut r, path, MATRIX_MAGIC)?;
    let version = r.read_u16::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != BUNDLE_VERSION {
        return Err(Error::format(
            name,
            format!("version mismatch: expected {BUNDLE_VERSION}, found {version}"),
        ));
    }
    let rows = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(&name, "rows*cols overflows"))?;
    let mut raw = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut raw).map_err(|_| {
        Error::format(&name, format!("truncated: header declares {rows}x{cols} values"))
    })?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(
            &name,
            format!("trailing bytes after {rows}x{cols} values"),
        ));
    }
    Matrix::from_vec(rows, cols, raw.into_iter().map(|x| T::of(f64::from(x))).collect())
}

fn write_labels(path: &Path, labels: &[ClassId]) -> Result<()> {
    let count = u32::try_from(labels.len()).map_err(|_| Error::format(LABELS, "too many labels"))?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res: std::io::Result<()> = (|| {
        w.write_all(LABELS_MAGIC)?;
        w.write_u32::<LittleEndian>(count)?;
        for l in labels {
            w.write_u32::<LittleEndian>(l.0)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

fn read_labels(path: &Path) -> Result<Vec<ClassId>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_header(&mut r, path, LABELS_MAGIC)?;
    let count = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    let mut raw = vec![0u32; count];
    r.read_u32_into::<LittleEndian>(&mut raw)
        .map_err(|_| Error::format(LABELS, format!("truncated: header declares {count} labels")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(LABELS, format!("trailing bytes after {count} labels")));
    }
    Ok(raw.into_iter().map(ClassId).collect())
}
