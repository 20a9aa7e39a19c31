//! File formats: numeric CSV, raw little-endian f64 with a JSON sidecar, and
//! 16-bit PCM WAV.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shortest text that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// Parses CSV rows of numbers. All rows must have the same width; blank
/// lines are skipped.
pub fn parse_csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("csv record {}: {e}", line + 1)))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("csv record {}: '{f}' is not a finite number", line + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "csv record {} has {} fields, expected {}",
                    line + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Concatenates CSV rows into one sample stream.
pub fn parse_csv_signal(text: &str) -> Result<Vec<f64>> {
    Ok(parse_csv_rows(text)?.into_iter().flatten().collect())
}

pub fn write_csv_rows<'a, I, R>(header: Option<&[&str]>, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = &'a f64>,
{
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for row in rows {
        let cells: Vec<String> = row.into_iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub dim: usize,
    pub count: usize,
}

/// Decodes `count` vectors of `dim` little-endian f64 values.
pub fn parse_raw(bytes: &[u8], sidecar_json: &str) -> Result<(RawSidecar, Vec<f64>)> {
    let side: RawSidecar = serde_json::from_str(sidecar_json)?;
    if side.dim == 0 {
        return Err(Error::Parse("sidecar dim must be positive".into()));
    }
    let expected = side
        .dim
        .checked_mul(side.count)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse("sidecar dim * count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Parse(format!(
            "raw payload has {} bytes, sidecar implies {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parse("raw payload contains non-finite values".into()));
    }
    Ok((side, data))
}

/// Encodes row-major data and its sidecar.
pub fn encode_raw(data: &[f64], dim: usize) -> (Vec<u8>, String) {
    let bytes = data.iter().flat_map(|x| x.to_le_bytes()).collect();
    let side = RawSidecar { dim, count: data.len().checked_div(dim).unwrap_or(0) };
    (bytes, serde_json::to_string(&side).expect("sidecar serializes"))
}

/// Decodes a 16-bit PCM WAV file to mono samples in `[-1, 1)`; channels are
/// averaged.
pub fn parse_wav(bytes: &[u8]) -> Result<Vec<f64>> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Parse(format!("wav: {e}")))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Parse(format!(
            "wav: only 16-bit integer PCM is supported, got {:?} with {} bits",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let ch = spec.channels as usize;
    if ch == 0 {
        return Err(Error::Parse("wav: zero channels".into()));
    }
    let mut out = Vec::new();
    let mut acc = 0.0;
    let mut k = 0;
    for s in reader.into_samples::<i16>() {
        let s = s.map_err(|e| Error::Parse(format!("wav: {e}")))?;
        acc += s as f64 / 32768.0;
        k += 1;
        if k == ch {
            out.push(acc / ch as f64);
            acc = 0.0;
            k = 0;
        }
    }
    Ok(out)
}

/// Encodes mono samples as 16-bit PCM WAV (values are clipped to `[-1, 1)`).
pub fn encode_wav(samples: &[f64], sample_rate: u32, channels: u16) -> Result<Vec<u8>> {
    let spec = hound::WavSpec { channels, sample_rate, bits_per_sample: 16, sample_format: hound::SampleFormat::Int };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut buf, spec).map_err(|e| Error::Parse(format!("wav: {e}")))?;
        for &x in samples {
            let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            for _ in 0..channels {
                w.write_sample(v).map_err(|e| Error::Parse(format!("wav: {e}")))?;
            }
        }
        w.finalize().map_err(|e| Error::Parse(format!("wav: {e}")))?;
    }
    Ok(buf.into_inner())
}
