//! Dataset directories: one 8-bit PNG per sample, `manifest.csv` with labels
//! and factor values, and `spec.json` with the generating spec.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use acai_core::world::{DatasetSpec, Image, Sample};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: DatasetSpec,
    pub seed: u64,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub len: usize,
}

pub fn image_file_name(index: usize) -> String {
    format!("{index:08}.png")
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::write(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| Error::write(path, e))?;
    w.write_image_data(&image.data).map_err(|e| Error::write(path, e))?;
    w.finish().map_err(|e| Error::write(path, e))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::read(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::read(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::read(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::read(path, e))?;
    buf.truncate(info.buffer_size());
    let (h, w) = (info.height as usize, info.width as usize);
    let data = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => return Err(Error::read(path, "unexpanded palette image")),
    };
    Ok(Image { height: h, width: w, data })
}

pub fn save_dataset(dir: &Path, spec: &DatasetSpec, seed: u64, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::write(&manifest, e))?;
    let mut header = vec!["index".to_string(), "label".to_string()];
    header.extend((0..spec.num_factors()).map(|k| format!("factor_{k}")));
    w.write_record(&header).map_err(|e| Error::write(&manifest, e))?;
    for (i, s) in samples.iter().enumerate() {
        save_png(&dir.join(image_file_name(i)), &s.image)?;
        let mut row = vec![i.to_string(), s.label.to_string()];
        row.extend(s.factors.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| Error::write(&manifest, e))?;
    }
    w.flush().map_err(|e| Error::write(&manifest, e))?;
    let info = DatasetInfo {
        spec: spec.clone(),
        seed,
        num_classes: spec.num_classes,
        height: spec.height,
        width: spec.width,
        len: samples.len(),
    };
    crate::write_json(&dir.join("spec.json"), &info)
}

pub fn load_dataset(dir: &Path) -> Result<(DatasetInfo, Vec<Sample>)> {
    let info: DatasetInfo = crate::read_json(&dir.join("spec.json"))?;
    info.spec.validate()?;
    let manifest = dir.join("manifest.csv");
    let mut r = csv::Reader::from_path(&manifest).map_err(|e| Error::read(&manifest, e))?;
    let f = info.spec.num_factors();
    let mut samples = Vec::with_capacity(info.len);
    for (row_no, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::read(&manifest, e))?;
        if rec.len() != 2 + f {
            return Err(Error::read(&manifest, format!("row {row_no} has {} columns, expected {}", rec.len(), 2 + f)));
        }
        let parse = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|e| Error::read(&manifest, format!("row {row_no} column {k}: {e}")))
        };
        let index = parse(0)? as usize;
        if index != row_no {
            return Err(Error::read(&manifest, format!("row {row_no} has index {index}")));
        }
        let label = parse(1)? as usize;
        if label >= info.num_classes {
            return Err(Error::read(&manifest, format!("row {row_no}: label {label} outside [0, {})", info.num_classes)));
        }
        let factors = (0..f).map(|k| parse(2 + k)).collect::<Result<Vec<_>>>()?;
        let image = load_png(&dir.join(image_file_name(index)))?;
        if image.height != info.height || image.width != info.width {
            return Err(Error::read(&dir.join(image_file_name(index)), "image size disagrees with spec.json"));
        }
        samples.push(Sample { image, label, factors });
    }
    if samples.len() != info.len {
        return Err(Error::read(&manifest, format!("{} rows, spec.json says {}", samples.len(), info.len)));
    }
    Ok((info, samples))
}
