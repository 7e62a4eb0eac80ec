use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use super::image::GrayImage;
use super::synth::FINDING_NAMES;
use super::{CohortRecord, ImageRef};
use crate::error::{Error, Result};
use crate::nn::N_FINDINGS;
use crate::rng::tag;

pub const MANIFEST_FILE: &str = "manifest.csv";
const CACHE_MAGIC: &[u8; 8] = b"PBIMG\0\0\x01";

fn header() -> Vec<&'static str> {
    let mut h = vec!["patient_id", "image_path"];
    h.extend(FINDING_NAMES);
    h.extend(["sex", "age", "y1", "y12", "cohort_tag"]);
    h
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes every image as PNG under `dir/images/` and the manifest CSV at
/// `dir/manifest.csv`. Returns the manifest path.
pub fn write_manifest(dir: &Path, records: &[CohortRecord]) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut visit: HashMap<&str, usize> = HashMap::new();
    let rel: Vec<String> = records
        .iter()
        .map(|r| {
            let v = visit.entry(&r.patient_id).or_default();
            *v += 1;
            format!("images/{}_{}.png", r.patient_id, *v - 1)
        })
        .collect();
    records.par_iter().zip(&rel).try_for_each(|(r, p)| r.image.load()?.write_png(&dir.join(p)))?;

    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header())?;
    for (r, p) in records.iter().zip(&rel) {
        let mut row: Vec<String> = vec![r.patient_id.clone(), p.clone()];
        row.extend(r.findings.iter().map(|&f| flag(f).to_owned()));
        row.push(flag(r.sex).into());
        row.push(r.age.to_string());
        row.push(flag(r.y1).into());
        row.push(flag(r.y12).into());
        row.push(r.cohort_tag.name().into());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn parse_flag(s: &str, col: &str, line: usize) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::invalid(format!("manifest line {line}: column {col} must be 0 or 1, got `{s}`"))),
    }
}

/// Reads a manifest; image paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<CohortRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::Reader::from_path(path)?;
    let expected = header();
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if got != expected {
        return Err(Error::invalid(format!("{}: unexpected header {got:?}", path.display())));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let mut findings = [false; N_FINDINGS];
        for (k, f) in findings.iter_mut().enumerate() {
            *f = parse_flag(&row[2 + k], FINDING_NAMES[k], line)?;
        }
        let c = 2 + N_FINDINGS;
        let age: f64 = row[c + 1]
            .parse()
            .map_err(|_| Error::invalid(format!("manifest line {line}: bad age `{}`", &row[c + 1])))?;
        out.push(CohortRecord {
            patient_id: row[0].to_owned(),
            image: ImageRef::Path(base.join(&row[1])),
            findings,
            sex: parse_flag(&row[c], "sex", line)?,
            age,
            y1: parse_flag(&row[c + 2], "y1", line)?,
            y12: parse_flag(&row[c + 3], "y12", line)?,
            cohort_tag: row[c + 4].parse()?,
        });
    }
    Ok(out)
}

pub fn write_image_cache(path: &Path, images: &[Arc<GrayImage>]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + images.iter().map(|i| 8 + i.pixels.len()).sum::<usize>());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&(images.len() as u64).to_le_bytes());
    for img in images {
        buf.extend_from_slice(&(img.height as u32).to_le_bytes());
        buf.extend_from_slice(&(img.width as u32).to_le_bytes());
        buf.extend_from_slice(&img.pixels);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_image_cache(path: &Path) -> Result<Vec<Arc<GrayImage>>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    let bad = || Error::invalid(format!("{}: truncated or corrupt image cache", path.display()));
    if buf.len() < 16 || &buf[..8] != CACHE_MAGIC {
        return Err(bad());
    }
    let n = u64::from_le_bytes(buf[8..16].try_into().unwrap()) as usize;
    let mut pos = 16;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let dims = buf.get(pos..pos + 8).ok_or_else(bad)?;
        let h = u32::from_le_bytes(dims[..4].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(dims[4..].try_into().unwrap()) as usize;
        pos += 8;
        let px = buf.get(pos..pos + h * w).ok_or_else(bad)?;
        out.push(Arc::new(GrayImage::new(h, w, px.to_vec())?));
        pos += h * w;
    }
    if pos != buf.len() {
        return Err(bad());
    }
    Ok(out)
}

/// Loads the images of `records` read from `manifest`, going through a
/// binary cache in `cache_dir` keyed by the manifest contents.
pub fn load_images(records: &[CohortRecord], manifest: &Path, cache_dir: Option<&Path>) -> Result<Vec<Arc<GrayImage>>> {
    let cache = match cache_dir {
        Some(dir) => {
            let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
            Some(dir.join(format!("{:016x}.bin", tag(&text))))
        }
        None => None,
    };
    if let Some(c) = cache.as_ref().filter(|c| c.exists()) {
        let images = read_image_cache(c)?;
        if images.len() == records.len() {
            return Ok(images);
        }
    }
    let images: Vec<Arc<GrayImage>> = records.par_iter().map(|r| r.image.load()).collect::<Result<_>>()?;
    if let Some(c) = cache {
        write_image_cache(&c, &images)?;
    }
    Ok(images)
}
