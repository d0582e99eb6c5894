//! Class-level salient color profiles.
//!
//! Salient pixels arrive as a stream of per-instance records. Each pixel is
//! assigned to the nearest of 14 fixed RGB anchors and folded into a running
//! (count, mean) pair for its class and bin, so memory does not grow with the
//! stream.
//!
//! `saliency.bin` layout, repeated until EOF:
//!
//! ```text
//! u32 LE instance_index
//! u32 LE pixel_count
//! pixel_count x [R, G, B] bytes
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bundle::LabelVector;
use crate::error::{Error, Result};

pub const BIN_COUNT: usize = 14;

pub const ANCHORS: [(&str, [u8; 3]); BIN_COUNT] = [
    ("black", [0, 0, 0]),
    ("gray", [128, 128, 128]),
    ("light-gray", [192, 192, 192]),
    ("white", [255, 255, 255]),
    ("red", [220, 30, 30]),
    ("orange", [255, 140, 0]),
    ("yellow", [255, 215, 0]),
    ("brown", [139, 90, 43]),
    ("green", [34, 139, 34]),
    ("light-green", [144, 238, 144]),
    ("blue", [30, 60, 200]),
    ("light-blue", [135, 206, 250]),
    ("purple", [128, 0, 160]),
    ("pink", [255, 105, 180]),
];

pub fn bin_name(bin: usize) -> &'static str {
    ANCHORS[bin].0
}

/// Nearest anchor in raw RGB; ties go to the lower bin index.
pub fn bin_pixel(rgb: [u8; 3]) -> usize {
    let mut best = 0;
    let mut best_d = u32::MAX;
    for (i, (_, anchor)) in ANCHORS.iter().enumerate() {
        let d: u32 = rgb
            .iter()
            .zip(anchor)
            .map(|(&a, &b)| {
                let diff = a as i32 - b as i32;
                (diff * diff) as u32
            })
            .sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaliencyRecord {
    pub instance_index: u32,
    pub pixels: Vec<[u8; 3]>,
}

pub fn write_record<W: Write>(w: &mut W, record: &SaliencyRecord) -> io::Result<()> {
    w.write_all(&record.instance_index.to_le_bytes())?;
    w.write_all(&(record.pixels.len() as u32).to_le_bytes())?;
    for px in &record.pixels {
        w.write_all(px)?;
    }
    Ok(())
}

pub fn write_saliency_file(path: &Path, records: &[SaliencyRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        write_record(&mut w, r).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Streaming parser for saliency records. Enforces strictly increasing
/// instance indices and, when given, the `n_instances` bound.
pub struct SaliencyReader<R> {
    inner: R,
    offset: u64,
    n_instances: Option<usize>,
    last_index: Option<u32>,
    done: bool,
}

impl<R: Read> SaliencyReader<R> {
    pub fn new(inner: R, n_instances: Option<usize>) -> Self {
        SaliencyReader {
            inner,
            offset: 0,
            n_instances,
            last_index: None,
            done: false,
        }
    }

    /// Fills `buf`; returns `Ok(false)` on a clean EOF before the first byte.
    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<bool> {
        let mut read = 0;
        while read < buf.len() {
            match self.inner.read(&mut buf[read..]) {
                Ok(0) => break,
                Ok(n) => read += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => {
                    return Err(Error::MalformedRecord {
                        offset: self.offset + read as u64,
                        reason: e.to_string(),
                    })
                }
            }
        }
        if read == 0 && what == "header" {
            return Ok(false);
        }
        if read < buf.len() {
            return Err(Error::MalformedRecord {
                offset: self.offset,
                reason: format!("truncated {what}: expected {} bytes, found {read}", buf.len()),
            });
        }
        self.offset += read as u64;
        Ok(true)
    }

    fn next_record(&mut self) -> Result<Option<SaliencyRecord>> {
        let start = self.offset;
        let mut header = [0u8; 8];
        if !self.fill(&mut header, "header")? {
            return Ok(None);
        }
        let instance_index = u32::from_le_bytes(header[..4].try_into().unwrap());
        let pixel_count = u32::from_le_bytes(header[4..].try_into().unwrap()) as usize;
        if let Some(n) = self.n_instances {
            if instance_index as usize >= n {
                return Err(Error::MalformedRecord {
                    offset: start,
                    reason: format!("instance index {instance_index} out of range (n_instances {n})"),
                });
            }
        }
        if self.last_index.is_some_and(|last| instance_index <= last) {
            return Err(Error::MalformedRecord {
                offset: start,
                reason: format!("instance index {instance_index} is not strictly increasing"),
            });
        }
        self.last_index = Some(instance_index);
        // grow with the data actually present, not the declared count
        let mut payload = Vec::new();
        let mut chunk = [0u8; 3 * 1024];
        let mut remaining = pixel_count * 3;
        while remaining > 0 {
            let take = remaining.min(chunk.len());
            self.fill(&mut chunk[..take], "pixel payload")?;
            payload.extend_from_slice(&chunk[..take]);
            remaining -= take;
        }
        let pixels = payload.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(Some(SaliencyRecord { instance_index, pixels }))
    }
}

impl<R: Read> Iterator for SaliencyReader<R> {
    type Item = Result<SaliencyRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn open_saliency(path: &Path, n_instances: Option<usize>) -> Result<SaliencyReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(SaliencyReader::new(BufReader::new(file), n_instances))
}

/// Running count and per-channel mean for one bin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinState {
    pub count: u64,
    pub mean: [f64; 3],
}

impl BinState {
    pub fn push(&mut self, rgb: [u8; 3]) {
        let n1 = (self.count + 1) as f64;
        for (m, &p) in self.mean.iter_mut().zip(&rgb) {
            *m += (p as f64 - *m) / n1;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &BinState) {
        if other.count == 0 {
            return;
        }
        let total = self.count + other.count;
        let w = other.count as f64 / total as f64;
        for (m, o) in self.mean.iter_mut().zip(&other.mean) {
            *m += (o - *m) * w;
        }
        self.count = total;
    }
}

/// Fixed-size accumulator: `class_count x 14` bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorAccumulator {
    bins: Vec<[BinState; BIN_COUNT]>,
}

impl ColorAccumulator {
    pub fn new(class_count: usize) -> Self {
        ColorAccumulator {
            bins: vec![[BinState::default(); BIN_COUNT]; class_count],
        }
    }

    pub fn class_count(&self) -> usize {
        self.bins.len()
    }

    /// Number of bin states held; fixed at construction.
    pub fn state_len(&self) -> usize {
        self.bins.len() * BIN_COUNT
    }

    pub fn push_pixel(&mut self, class_id: u32, rgb: [u8; 3]) {
        self.bins[class_id as usize][bin_pixel(rgb)].push(rgb);
    }

    pub fn push_record(&mut self, record: &SaliencyRecord, labels: &LabelVector) -> Result<()> {
        let i = record.instance_index as usize;
        if i >= labels.len() {
            return Err(Error::invalid(format!(
                "saliency instance index {i} out of range (n_instances {})",
                labels.len()
            )));
        }
        let class = labels.get(i);
        if class as usize >= self.bins.len() {
            return Err(Error::invalid(format!("class id {class} out of range")));
        }
        for &px in &record.pixels {
            self.push_pixel(class, px);
        }
        Ok(())
    }

    /// Folds another shard into this one by count-weighted means.
    pub fn merge(&mut self, other: &ColorAccumulator) -> Result<()> {
        if other.bins.len() != self.bins.len() {
            return Err(Error::invalid("cannot merge accumulators over different class counts"));
        }
        for (mine, theirs) in self.bins.iter_mut().zip(&other.bins) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        Ok(())
    }

    pub fn state(&self, class_id: u32, bin: usize) -> &BinState {
        &self.bins[class_id as usize][bin]
    }

    pub fn finish(&self) -> ColorHistogram {
        let classes = self
            .bins
            .iter()
            .map(|bins| {
                let total: u64 = bins.iter().map(|b| b.count).sum();
                bins.iter()
                    .enumerate()
                    .map(|(i, b)| ColorBin {
                        name: ANCHORS[i].0.to_string(),
                        anchor: ANCHORS[i].1,
                        count: b.count,
                        mean: (b.count > 0).then_some(b.mean),
                        fraction: (total > 0).then(|| b.count as f64 / total as f64),
                    })
                    .collect()
            })
            .collect();
        ColorHistogram { classes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorBin {
    pub name: String,
    pub anchor: [u8; 3],
    pub count: u64,
    /// Running mean RGB; absent for an empty bin.
    pub mean: Option<[f64; 3]>,
    /// Absent when the class has no pixels at all.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorHistogram {
    /// `[class][bin]`
    pub classes: Vec<Vec<ColorBin>>,
}

/// Single pass over `records`, attributing each to the label of its instance.
pub fn accumulate<I>(records: I, labels: &LabelVector, class_count: usize) -> Result<ColorHistogram>
where
    I: IntoIterator<Item = Result<SaliencyRecord>>,
{
    let mut acc = ColorAccumulator::new(class_count);
    for record in records {
        acc.push_record(&record?, labels)?;
    }
    Ok(acc.finish())
}

pub fn accumulate_file(path: &Path, labels: &LabelVector, class_count: usize) -> Result<ColorHistogram> {
    accumulate(open_saliency(path, Some(labels.len()))?, labels, class_count)
}

pub fn rgb_hex(rgb: [f64; 3]) -> String {
    let c = |v: f64| v.round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", c(rgb[0]), c(rgb[1]), c(rgb[2]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorReportRow {
    pub class_id: u32,
    pub rank: usize,
    pub bin: String,
    pub count: u64,
    pub fraction: f64,
    /// Running mean as `#rrggbb`, or the anchor for an empty bin.
    pub mean_hex: String,
}

/// Bins per class sorted by fraction, largest first (ties by bin order).
/// Classes without any pixels produce no rows.
pub fn class_color_report(hist: &ColorHistogram) -> Vec<ColorReportRow> {
    let mut rows = Vec::new();
    for (class, bins) in hist.classes.iter().enumerate() {
        let mut order: Vec<usize> = (0..bins.len()).filter(|&b| bins[b].fraction.is_some()).collect();
        order.sort_by(|&a, &b| bins[b].count.cmp(&bins[a].count).then(a.cmp(&b)));
        for (rank, b) in order.into_iter().enumerate() {
            let bin = &bins[b];
            let display = bin.mean.unwrap_or(bin.anchor.map(f64::from));
            rows.push(ColorReportRow {
                class_id: class as u32,
                rank,
                bin: bin.name.clone(),
                count: bin.count,
                fraction: bin.fraction.unwrap_or(0.0),
                mean_hex: rgb_hex(display),
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(records: &[SaliencyRecord]) -> Vec<u8> {
        let mut out = Vec::new();
        for r in records {
            write_record(&mut out, r).unwrap();
        }
        out
    }

    #[test]
    fn anchors_bin_to_themselves() {
        assert_eq!(bin_name(bin_pixel([255, 0, 0])), "red");
        assert_eq!(bin_name(bin_pixel([0, 0, 0])), "black");
        for (i, (_, rgb)) in ANCHORS.iter().enumerate() {
            assert_eq!(bin_pixel(*rgb), i);
        }
    }

    #[test]
    fn two_point_mean() {
        let mut s = BinState::default();
        s.push([10, 10, 10]);
        s.push([30, 30, 30]);
        assert_eq!(s.count, 2);
        assert_eq!(s.mean, [20.0, 20.0, 20.0]);
    }

    #[test]
    fn empty_stream() {
        let h = accumulate(std::iter::empty(), &vec![0, 1].into(), 2).unwrap();
        assert!(h.classes.iter().flatten().all(|b| b.count == 0 && b.fraction.is_none()));
        assert!(class_color_report(&h).is_empty());
    }

    #[test]
    fn reader_round_trip_and_errors() {
        let recs = vec![
            SaliencyRecord {
                instance_index: 0,
                pixels: vec![[1, 2, 3], [4, 5, 6]],
            },
            SaliencyRecord {
                instance_index: 2,
                pixels: vec![],
            },
        ];
        let bytes = encode(&recs);
        let back: Vec<_> = SaliencyReader::new(&bytes[..], Some(3)).collect::<Result<_>>().unwrap();
        assert_eq!(back, recs);

        let truncated = &bytes[..bytes.len() - 9];
        let err = SaliencyReader::new(truncated, None).collect::<Result<Vec<_>>>().unwrap_err();
        assert!(matches!(err, Error::MalformedRecord { offset: 8, .. }), "{err}");

        let out_of_range = SaliencyReader::new(&bytes[..], Some(2)).collect::<Result<Vec<_>>>();
        assert!(matches!(out_of_range, Err(Error::MalformedRecord { offset: 14, .. })));

        let mut swapped = encode(&recs[1..]);
        swapped.extend(encode(&recs[..1]));
        assert!(SaliencyReader::new(&swapped[..], None).collect::<Result<Vec<_>>>().is_err());

        // declared pixel count far beyond the payload
        let mut huge = Vec::new();
        huge.extend(0u32.to_le_bytes());
        huge.extend(u32::MAX.to_le_bytes());
        huge.extend([1, 2, 3]);
        assert!(SaliencyReader::new(&huge[..], None).next().unwrap().is_err());
    }

    #[test]
    fn report_fractions() {
        let mut acc = ColorAccumulator::new(1);
        for _ in 0..3 {
            acc.push_pixel(0, [0, 0, 0]);
        }
        acc.push_pixel(0, [255, 255, 255]);
        let rows = class_color_report(&acc.finish());
        assert_eq!(rows[0].bin, "black");
        assert_eq!(rows[0].fraction, 0.75);
        assert_eq!(rows[1].bin, "white");
        assert_eq!(rows[1].fraction, 0.25);
        assert_eq!(rows[1].mean_hex, "#ffffff");
        assert!(rows[2..].iter().all(|r| r.fraction == 0.0));
        assert_eq!(rows.len(), BIN_COUNT);
    }

    #[test]
    fn record_index_must_be_covered_by_labels() {
        let mut acc = ColorAccumulator::new(2);
        let rec = SaliencyRecord {
            instance_index: 5,
            pixels: vec![[0, 0, 0]],
        };
        assert!(acc.push_record(&rec, &vec![0, 1].into()).is_err());
    }

    #[test]
    fn hex_rounding() {
        assert_eq!(rgb_hex([0.4, 127.5, 300.0]), "#0080ff");
    }
}
