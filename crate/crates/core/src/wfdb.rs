//! Reader for PhysioNet WFDB records: `.hea` headers, format 212/16 signal
//! files and MIT-format binary annotation files.
//!
//! Only single-segment records whose signals share one `.dat` file are
//! supported, which covers QTDB and MITDB.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Default ADC gain (adu/mV) used when a signal line omits it or gives 0.
pub const DEFAULT_GAIN: f64 = 200.0;
/// Default sampling frequency when the record line omits it.
pub const DEFAULT_FS: f64 = 250.0;

#[derive(Debug, Error)]
pub enum WfdbError {
    #[error("header line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("signal file truncated at byte offset {offset} (expected {expected} bytes)")]
    Truncated { offset: usize, expected: usize },
    #[error("unsupported signal format {0} (only 212 and 16 are supported)")]
    UnsupportedFormat(u16),
    #[error("annotation stream: {msg} at byte offset {offset}")]
    Annotation { offset: usize, msg: String },
    #[error("annotation at sample {sample} outside record of {n_samples} samples")]
    AnnotationOutOfRange { sample: u64, n_samples: usize },
    #[error("record {record}: {msg}")]
    Record { record: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, WfdbError>;

fn header_err(line: usize, msg: impl Into<String>) -> WfdbError {
    WfdbError::Header {
        line,
        msg: msg.into(),
    }
}

/// On-disk sample encoding of one signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SignalFormat {
    /// Two 12-bit two's complement samples packed into three bytes.
    Packed212,
    /// 16-bit little-endian two's complement.
    Le16,
}

impl SignalFormat {
    pub fn from_code(code: u16) -> Result<Self> {
        match code {
            212 => Ok(Self::Packed212),
            16 => Ok(Self::Le16),
            other => Err(WfdbError::UnsupportedFormat(other)),
        }
    }

    pub fn code(self) -> u16 {
        match self {
            Self::Packed212 => 212,
            Self::Le16 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignalSpec {
    pub file_name: String,
    pub format: SignalFormat,
    /// ADC units per physical unit.
    pub gain: f64,
    /// ADC value corresponding to 0 physical units.
    pub baseline: i32,
    pub adc_zero: i32,
    pub units: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RecordHeader {
    pub record_name: String,
    pub n_signals: usize,
    pub sampling_frequency: f64,
    /// Samples per signal; 0 when the header does not say.
    pub n_samples: usize,
    pub signals: Vec<SignalSpec>,
}

/// Parses the text of a `.hea` file.
///
/// Comment (`#`) and blank lines are skipped. A missing gain (or a gain of 0)
/// becomes [`DEFAULT_GAIN`]; a missing baseline falls back to the ADC zero,
/// which itself defaults to 0.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (rec_line_no, rec_line) = lines
        .next()
        .ok_or_else(|| header_err(1, "missing record line"))?;
    let fields: Vec<&str> = rec_line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(header_err(
            rec_line_no,
            "record line needs at least a name and signal count",
        ));
    }
    let record_name = fields[0];
    if record_name.contains('/') {
        return Err(header_err(
            rec_line_no,
            format!("multi-segment record '{record_name}' is not supported"),
        ));
    }
    let n_signals: usize = fields[1]
        .parse()
        .map_err(|_| header_err(rec_line_no, format!("bad signal count '{}'", fields[1])))?;
    if n_signals < 1 {
        return Err(header_err(rec_line_no, "signal count must be >= 1"));
    }
    let sampling_frequency = match fields.get(2) {
        Some(f) => {
            // "360/360(0)" style: keep only the leading number
            let end = f.find(['/', '(']).unwrap_or(f.len());
            f[..end]
                .parse::<f64>()
                .map_err(|_| header_err(rec_line_no, format!("bad sampling frequency '{f}'")))?
        }
        None => DEFAULT_FS,
    };
    if !(sampling_frequency > 0.0 && sampling_frequency.is_finite()) {
        return Err(header_err(rec_line_no, "sampling frequency must be > 0"));
    }
    let n_samples = match fields.get(3) {
        Some(n) => n
            .parse::<usize>()
            .map_err(|_| header_err(rec_line_no, format!("bad sample count '{n}'")))?,
        None => 0,
    };

    let mut signals = Vec::with_capacity(n_signals);
    for (line_no, line) in lines.by_ref().take(n_signals) {
        signals.push(parse_signal_line(line_no, line)?);
    }
    if signals.len() != n_signals {
        return Err(header_err(
            rec_line_no,
            format!(
                "record declares {n_signals} signals but {} signal lines follow",
                signals.len()
            ),
        ));
    }

    Ok(RecordHeader {
        record_name: record_name.to_string(),
        n_signals,
        sampling_frequency,
        n_samples,
        signals,
    })
}

fn parse_signal_line(line_no: usize, line: &str) -> Result<SignalSpec> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 2 {
        return Err(header_err(line_no, "signal line needs a file name and format"));
    }
    let fmt_digits: String = f[1].chars().take_while(|c| c.is_ascii_digit()).collect();
    let code: u16 = fmt_digits
        .parse()
        .map_err(|_| header_err(line_no, format!("bad format field '{}'", f[1])))?;
    if f[1].len() != fmt_digits.len() {
        // samples-per-frame (x), skew (:) and byte offset (+) modifiers
        return Err(header_err(
            line_no,
            format!("format modifiers in '{}' are not supported", f[1]),
        ));
    }
    let format = SignalFormat::from_code(code).map_err(|_| {
        header_err(
            line_no,
            format!("unsupported signal format {code} (only 212 and 16)"),
        )
    })?;

    let adc_zero: i32 = match f.get(4) {
        Some(s) => s
            .parse()
            .map_err(|_| header_err(line_no, format!("bad ADC zero '{s}'")))?,
        None => 0,
    };

    let mut gain = DEFAULT_GAIN;
    let mut baseline = None;
    let mut units = "mV".to_string();
    if let Some(spec) = f.get(2) {
        let (num_part, unit_part) = match spec.split_once('/') {
            Some((a, b)) => (a, Some(b)),
            None => (*spec, None),
        };
        let (gain_str, base_str) = match num_part.split_once('(') {
            Some((g, rest)) => {
                let b = rest.strip_suffix(')').ok_or_else(|| {
                    header_err(line_no, format!("unterminated baseline in '{spec}'"))
                })?;
                (g, Some(b))
            }
            None => (num_part, None),
        };
        let g: f64 = gain_str
            .parse()
            .map_err(|_| header_err(line_no, format!("bad gain '{gain_str}'")))?;
        if g < 0.0 || !g.is_finite() {
            return Err(header_err(line_no, format!("gain must be > 0, got {g}")));
        }
        if g > 0.0 {
            gain = g;
        }
        if let Some(b) = base_str {
            baseline = Some(
                b.parse::<i32>()
                    .map_err(|_| header_err(line_no, format!("bad baseline '{b}'")))?,
            );
        }
        if let Some(u) = unit_part {
            units = u.to_string();
        }
    }
    let description = if f.len() > 8 { f[8..].join(" ") } else { String::new() };

    Ok(SignalSpec {
        file_name: f[0].to_string(),
        format,
        gain,
        baseline: baseline.unwrap_or(adc_zero),
        adc_zero,
        units,
        description,
    })
}

/// Physical-unit samples, one column per signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalData {
    n_signals: usize,
    /// Row-major `[n_samples x n_signals]`.
    data: Vec<f64>,
}

impl SignalData {
    /// Wraps row-major `[samples x signals]` physical values.
    pub fn from_rows(n_signals: usize, data: Vec<f64>) -> Result<Self> {
        if n_signals == 0 || !data.len().is_multiple_of(n_signals) {
            return Err(WfdbError::Record {
                record: String::new(),
                msg: format!("{} values do not form rows of {n_signals} signals", data.len()),
            });
        }
        Ok(Self { n_signals, data })
    }

    pub fn n_samples(&self) -> usize {
        self.data.len() / self.n_signals.max(1)
    }

    pub fn n_signals(&self) -> usize {
        self.n_signals
    }

    pub fn get(&self, sample: usize, signal: usize) -> f64 {
        self.data[sample * self.n_signals + signal]
    }

    pub fn row(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.n_signals..(sample + 1) * self.n_signals]
    }

    /// Copies one signal out as a contiguous vector.
    pub fn channel(&self, signal: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(signal)
            .step_by(self.n_signals)
            .copied()
            .collect()
    }
}

fn sign_extend_12(v: u16) -> i32 {
    ((v as i32) << 20) >> 20
}

/// Unpacks format-212 bytes into raw ADC values.
///
/// `n_values` is the number of 12-bit samples to read; an odd count ends with
/// a two-byte half frame as WFDB writes it.
pub fn unpack_212(bytes: &[u8], n_values: usize) -> Result<Vec<i32>> {
    let expected = n_values / 2 * 3 + (n_values % 2) * 2;
    if bytes.len() < expected {
        let full_pairs = bytes.len() / 3;
        return Err(WfdbError::Truncated {
            offset: full_pairs * 3,
            expected,
        });
    }
    let mut out = Vec::with_capacity(n_values);
    for chunk in bytes[..n_values / 2 * 3].chunks_exact(3) {
        let (b0, b1, b2) = (chunk[0] as u16, chunk[1] as u16, chunk[2] as u16);
        out.push(sign_extend_12(b0 | ((b1 & 0x0F) << 8)));
        out.push(sign_extend_12(b2 | ((b1 & 0xF0) << 4)));
    }
    if n_values % 2 == 1 {
        let i = n_values / 2 * 3;
        let (b0, b1) = (bytes[i] as u16, bytes[i + 1] as u16);
        out.push(sign_extend_12(b0 | ((b1 & 0x0F) << 8)));
    }
    Ok(out)
}

fn unpack_16(bytes: &[u8], n_values: usize) -> Result<Vec<i32>> {
    let expected = n_values * 2;
    if bytes.len() < expected {
        return Err(WfdbError::Truncated {
            offset: bytes.len() / 2 * 2,
            expected,
        });
    }
    Ok(bytes[..expected]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as i32)
        .collect())
}

/// Decodes the contents of a record's `.dat` file into physical units.
///
/// All signals must live in the same file with the same format. When the
/// header's sample count is 0 the length is taken from the file, and a
/// trailing partial frame is an error.
pub fn decode_signal(header: &RecordHeader, bytes: &[u8]) -> Result<SignalData> {
    let first = header.signals.first().ok_or_else(|| WfdbError::Record {
        record: header.record_name.clone(),
        msg: "header has no signals".into(),
    })?;
    if header
        .signals
        .iter()
        .any(|s| s.file_name != first.file_name || s.format != first.format)
    {
        return Err(WfdbError::Record {
            record: header.record_name.clone(),
            msg: "signals spread over several files or formats are not supported".into(),
        });
    }
    let n_sig = header.n_signals;
    let n_samples = if header.n_samples > 0 {
        header.n_samples
    } else {
        let (frame_bytes_num, frame_bytes_den) = match first.format {
            SignalFormat::Packed212 => (3 * n_sig, 2),
            SignalFormat::Le16 => (2 * n_sig, 1),
        };
        let total_bits = bytes.len() * frame_bytes_den;
        if !total_bits.is_multiple_of(frame_bytes_num) {
            let whole = bytes.len() * frame_bytes_den / frame_bytes_num;
            return Err(WfdbError::Truncated {
                offset: whole * frame_bytes_num / frame_bytes_den,
                expected: (whole + 1) * frame_bytes_num / frame_bytes_den,
            });
        }
        total_bits / frame_bytes_num
    };
    let n_values = n_samples * n_sig;
    let adc = match first.format {
        SignalFormat::Packed212 => unpack_212(bytes, n_values)?,
        SignalFormat::Le16 => unpack_16(bytes, n_values)?,
    };
    let data = adc
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = &header.signals[i % n_sig];
            (v - s.baseline) as f64 / s.gain
        })
        .collect();
    Ok(SignalData {
        n_signals: n_sig,
        data,
    })
}

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

/// MIT annotation codes 0..=49 and their mnemonic symbols. Unused codes map
/// to `None`.
const SYMBOLS: [Option<char>; 50] = [
    Some(' '), Some('N'), Some('L'), Some('R'), Some('a'), Some('V'), Some('F'), Some('J'),
    Some('A'), Some('S'), Some('E'), Some('j'), Some('/'), Some('Q'), Some('~'), None,
    Some('|'), None, Some('s'), Some('T'), Some('*'), Some('D'), Some('"'), Some('='),
    Some('p'), Some('B'), Some('^'), Some('t'), Some('+'), Some('u'), Some('?'), Some('!'),
    Some('['), Some(']'), Some('e'), Some('n'), Some('@'), Some('x'), Some('f'), Some('('),
    Some(')'), Some('r'), None, None, None, None, None, None, None, None,
];

/// Whether a code denotes a beat (QRS) annotation, following the WFDB
/// `isqrs` table.
pub fn is_beat_code(code: u8) -> bool {
    matches!(code, 1..=13 | 25 | 30 | 34 | 35 | 37 | 38 | 41)
}

/// Symbol for an annotation code, `None` for unused codes.
pub fn code_symbol(code: u8) -> Option<char> {
    SYMBOLS.get(code as usize).copied().flatten()
}

/// Inverse of [`code_symbol`].
pub fn symbol_code(symbol: char) -> Option<u8> {
    SYMBOLS
        .iter()
        .position(|s| *s == Some(symbol))
        .map(|p| p as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationEvent {
    pub sample_index: u64,
    /// Raw annotation type code (0..=49).
    pub code: u8,
    pub subtype: i8,
    pub chan: u8,
    pub num: i8,
    pub aux: Option<String>,
}

impl AnnotationEvent {
    /// Plain annotation of type `code` with no modifiers.
    pub fn new(sample_index: u64, code: u8) -> Self {
        Self {
            sample_index,
            code,
            subtype: 0,
            chan: 0,
            num: 0,
            aux: None,
        }
    }

    /// Mnemonic symbol, `'?'`-free: unused codes give U+FFFD.
    pub fn symbol(&self) -> char {
        code_symbol(self.code).unwrap_or('\u{FFFD}')
    }

    pub fn is_beat(&self) -> bool {
        is_beat_code(self.code)
    }
}

impl fmt::Display for AnnotationEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.symbol(), self.sample_index)
    }
}

/// Decodes an MIT-format annotation file.
///
/// SUB, CHN, NUM and AUX words modify the annotation they follow; CHN and NUM
/// values carry over to later annotations. SKIP intervals are added to the
/// running time of the next annotation.
pub fn decode_annotations(bytes: &[u8]) -> Result<Vec<AnnotationEvent>> {
    let mut out: Vec<AnnotationEvent> = Vec::new();
    let mut time: i64 = 0;
    let mut chan: u8 = 0;
    let mut num: i8 = 0;
    let mut pos = 0usize;
    loop {
        if pos + 2 > bytes.len() {
            return Err(WfdbError::Annotation {
                offset: pos,
                msg: "missing 0x0000 terminator".into(),
            });
        }
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        let word_pos = pos;
        pos += 2;
        if word == 0 {
            break;
        }
        let code = (word >> 10) as u8;
        let value = word & 0x03FF;
        match code {
            SKIP => {
                if pos + 4 > bytes.len() {
                    return Err(WfdbError::Annotation {
                        offset: word_pos,
                        msg: "SKIP interval overruns buffer".into(),
                    });
                }
                // PDP-11 long: high 16-bit word first, each little-endian
                let hi = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as u32;
                let lo = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]) as u32;
                time += ((hi << 16) | lo) as i32 as i64;
                pos += 4;
            }
            NUM => {
                num = value as i16 as i8;
                if let Some(last) = out.last_mut() {
                    last.num = num;
                }
            }
            SUB => {
                if let Some(last) = out.last_mut() {
                    last.subtype = value as i16 as i8;
                }
            }
            CHN => {
                chan = value as u8;
                if let Some(last) = out.last_mut() {
                    last.chan = chan;
                }
            }
            AUX => {
                let len = value as usize;
                if pos + len > bytes.len() {
                    return Err(WfdbError::Annotation {
                        offset: word_pos,
                        msg: format!("AUX length {len} overruns buffer"),
                    });
                }
                let raw = &bytes[pos..pos + len];
                let text = String::from_utf8_lossy(raw)
                    .trim_end_matches('\0')
                    .to_string();
                if let Some(last) = out.last_mut() {
                    last.aux = Some(text);
                }
                pos += len + (len & 1);
            }
            0..=49 => {
                time += value as i64;
                if time < 0 {
                    return Err(WfdbError::Annotation {
                        offset: word_pos,
                        msg: format!("negative sample time {time}"),
                    });
                }
                out.push(AnnotationEvent {
                    sample_index: time as u64,
                    code,
                    subtype: 0,
                    chan,
                    num,
                    aux: None,
                });
            }
            _ => {
                return Err(WfdbError::Annotation {
                    offset: word_pos,
                    msg: format!("reserved annotation code {code}"),
                })
            }
        }
    }
    out.sort_by_key(|e| e.sample_index);
    Ok(out)
}

/// Checks that every annotation falls inside `[0, n_samples)`.
pub fn check_annotation_bounds(events: &[AnnotationEvent], n_samples: usize) -> Result<()> {
    match events.iter().find(|e| e.sample_index >= n_samples as u64) {
        Some(e) => Err(WfdbError::AnnotationOutOfRange {
            sample: e.sample_index,
            n_samples,
        }),
        None => Ok(()),
    }
}

/// One record loaded from disk: header, decoded signals and the annotations
/// of a single annotator.
#[derive(Debug, Clone)]
pub struct Record {
    pub header: RecordHeader,
    pub signals: SignalData,
    pub annotations: Vec<AnnotationEvent>,
    /// Extension of the annotation file actually used.
    pub annotator: String,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| WfdbError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads only the header of `name` from `dir`.
pub fn read_header(dir: &Path, name: &str) -> Result<RecordHeader> {
    let bytes = read_file(&dir.join(format!("{name}.hea")))?;
    parse_header(&String::from_utf8_lossy(&bytes))
}

/// Loads record `name` from `dir` using the first annotator extension in
/// `annotators` whose file exists. An empty list loads no annotations.
pub fn load_record(dir: &Path, name: &str, annotators: &[&str]) -> Result<Record> {
    let header = read_header(dir, name)?;
    let dat = header
        .signals
        .first()
        .map(|s| s.file_name.clone())
        .unwrap_or_default();
    let signals = decode_signal(&header, &read_file(&dir.join(&dat))?)?;
    if annotators.is_empty() {
        return Ok(Record {
            header,
            signals,
            annotations: Vec::new(),
            annotator: String::new(),
        });
    }
    let ann_path = annotators
        .iter()
        .map(|ext| (ext, dir.join(format!("{name}.{ext}"))))
        .find(|(_, p)| p.exists());
    let (annotator, annotations) = match ann_path {
        Some((ext, p)) => {
            let ann = decode_annotations(&read_file(&p)?)?;
            check_annotation_bounds(&ann, signals.n_samples())?;
            (ext.to_string(), ann)
        }
        None => {
            return Err(WfdbError::Record {
                record: name.to_string(),
                msg: format!(
                    "no annotation file found (looked for extensions {annotators:?} in {})",
                    dir.display()
                ),
            })
        }
    };
    Ok(Record {
        header,
        signals,
        annotations,
        annotator,
    })
}

/// Lists record names in a directory: every `*.hea` stem, sorted.
pub fn list_records(dir: &Path) -> Result<Vec<String>> {
    let rd = std::fs::read_dir(dir).map_err(|source| WfdbError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut names: Vec<String> = rd
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension().and_then(|x| x.to_str()) == Some("hea"))
                .then(|| p.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .flatten()
        })
        .collect();
    names.sort();
    Ok(names)
}

/// Packs raw 12-bit ADC values in format 212 (an odd count ends with a
/// two-byte half frame).
pub fn encode_212(values: &[i32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 3 / 2 + 2);
    for pair in values.chunks(2) {
        let a = (pair[0] & 0x0FFF) as u16;
        out.push((a & 0xFF) as u8);
        match pair.get(1) {
            Some(&b) => {
                let b = (b & 0x0FFF) as u16;
                out.push((((a >> 8) & 0x0F) | ((b >> 4) & 0xF0)) as u8);
                out.push((b & 0xFF) as u8);
            }
            None => out.push(((a >> 8) & 0x0F) as u8),
        }
    }
    out
}

/// MIT-format annotation bytes for `(sample, code)` pairs sorted by sample.
/// Gaps above 1023 samples are written with a SKIP word.
pub fn encode_annotation_stream(events: &[(u64, u8)]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut t = 0u64;
    for &(s, code) in events {
        let mut d = s - t;
        if d > 1023 {
            let v = d as u32;
            out.extend_from_slice(&((SKIP as u16) << 10).to_le_bytes());
            out.extend_from_slice(&((v >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((v & 0xFFFF) as u16).to_le_bytes());
            d = 0;
        }
        out.extend_from_slice(&(((code as u16) << 10) | d as u16).to_le_bytes());
        t = s;
    }
    out.extend_from_slice(&[0, 0]);
    out
}

/// Header text for a single-file record.
pub fn format_header(h: &RecordHeader) -> String {
    let fs = if h.sampling_frequency.fract() == 0.0 {
        format!("{}", h.sampling_frequency as u64)
    } else {
        format!("{}", h.sampling_frequency)
    };
    let mut out = format!("{} {} {} {}\n", h.record_name, h.n_signals, fs, h.n_samples);
    for s in &h.signals {
        out.push_str(&format!(
            "{} {} {}({})/{} 12 {} 0 0 0 {}\n",
            s.file_name,
            s.format.code(),
            s.gain,
            s.baseline,
            s.units,
            s.adc_zero,
            s.description
        ));
    }
    out
}

/// Writes `<name>.hea`, `<name>.dat` (format 212) and `<name>.<ext>` for
/// each annotation stream. `adc` is row-major `[samples x signals]`.
pub fn write_record(
    dir: &Path,
    header: &RecordHeader,
    adc: &[i32],
    annotations: &[(&str, &[AnnotationEvent])],
) -> Result<()> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| WfdbError::Io { path, source }
    };
    let hea = dir.join(format!("{}.hea", header.record_name));
    std::fs::write(&hea, format_header(header)).map_err(io(&hea))?;
    let dat = dir.join(format!("{}.dat", header.record_name));
    std::fs::write(&dat, encode_212(adc)).map_err(io(&dat))?;
    for (ext, events) in annotations {
        let pairs: Vec<(u64, u8)> = events.iter().map(|e| (e.sample_index, e.code)).collect();
        let p = dir.join(format!("{}.{ext}", header.record_name));
        std::fs::write(&p, encode_annotation_stream(&pairs)).map_err(io(&p))?;
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testing {
    //! Short names for the encoders used throughout the tests.

    pub fn pack_212(values: &[i32]) -> Vec<u8> {
        super::encode_212(values)
    }

    pub fn encode_annotations(events: &[(u64, u8)]) -> Vec<u8> {
        super::encode_annotation_stream(events)
    }
}

#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;

    #[test]
    fn record_line_fields() {
        let h = parse_header(
            "sel100 2 250 225000\nsel100.dat 212 200 11 1024 0 0 0 MLII\nsel100.dat 212 200 11 1024 0 0 0 V5\n",
        )
        .unwrap();
        assert_eq!(h.record_name, "sel100");
        assert_eq!(h.n_signals, 2);
        assert_eq!(h.sampling_frequency, 250.0);
        assert_eq!(h.n_samples, 225000);
        assert_eq!(h.signals[1].description, "V5");
    }

    #[test]
    fn zero_signals_rejected() {
        let err = parse_header("rec 0 250 100\n").unwrap_err();
        assert!(err.to_string().contains("signal count must be >= 1"), "{err}");
    }

    #[test]
    fn missing_gain_defaults() {
        let h = parse_header("r 1 360 10\nr.dat 16\n").unwrap();
        assert_eq!(h.signals[0].gain, 200.0);
        assert_eq!(h.signals[0].baseline, 0);
        assert_eq!(h.signals[0].units, "mV");
    }

    #[test]
    fn explicit_baseline_and_units() {
        let h = parse_header("r 1 250 10\nr.dat 212 400(-12)/uV 12 7\n").unwrap();
        let s = &h.signals[0];
        assert_eq!((s.gain, s.baseline, s.adc_zero), (400.0, -12, 7));
        assert_eq!(s.units, "uV");
    }

    #[test]
    fn missing_signal_lines() {
        let err = parse_header("# comment\nr 2 250 10\nr.dat 212 200\n").unwrap_err();
        match err {
            WfdbError::Header { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unsupported_format_names_line() {
        let err = parse_header("r 1 250 10\nr.dat 310 200\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("310"), "{msg}");
    }

    #[test]
    fn unpack_212_examples() {
        assert_eq!(unpack_212(&[0x01, 0x00, 0x02], 2).unwrap(), vec![1, 2]);
        assert_eq!(unpack_212(&[0xFF, 0x0F, 0x00], 2).unwrap(), vec![-1, 0]);
        // -2048 and 2047 extremes
        assert_eq!(unpack_212(&[0x00, 0x78, 0xFF], 2).unwrap(), vec![-2048, 2047]);
    }

    #[test]
    fn truncated_212_reports_offset() {
        let h = parse_header("r 2 250 3\nr.dat 212\nr.dat 212\n").unwrap();
        // 6 values need 9 bytes
        match decode_signal(&h, &[0u8; 7]).unwrap_err() {
            WfdbError::Truncated { offset, expected } => {
                assert_eq!((offset, expected), (6, 9));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn partial_frame_without_length() {
        let h = parse_header("r 2 250\nr.dat 16\nr.dat 16\n").unwrap();
        let err = decode_signal(&h, &[0u8; 6]).unwrap_err();
        assert!(matches!(err, WfdbError::Truncated { offset: 4, .. }), "{err}");
        let ok = decode_signal(&h, &[0u8; 8]).unwrap();
        assert_eq!(ok.n_samples(), 2);
    }

    #[test]
    fn baseline_signal_is_zero() {
        let h = parse_header("r 1 250 4\nr.dat 16 100(37)\n").unwrap();
        let bytes: Vec<u8> = std::iter::repeat(37i16.to_le_bytes()).take(4).flatten().collect();
        let s = decode_signal(&h, &bytes).unwrap();
        assert!(s.channel(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn format16_deinterleaves() {
        let h = parse_header("r 2 250 2\nr.dat 16 100\nr.dat 16 50\n").unwrap();
        let vals: [i16; 4] = [100, -50, 200, 25];
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        let s = decode_signal(&h, &bytes).unwrap();
        assert_eq!(s.channel(0), vec![1.0, 2.0]);
        assert_eq!(s.channel(1), vec![-1.0, 0.5]);
    }

    #[test]
    fn odd_value_count_212() {
        let h = parse_header("r 1 250 3\nr.dat 212\n").unwrap();
        let bytes = pack_212(&[5, -6, 7]);
        assert_eq!(bytes.len(), 5);
        let s = decode_signal(&h, &bytes).unwrap();
        assert_eq!(s.channel(0), vec![5.0 / 200.0, -6.0 / 200.0, 7.0 / 200.0]);
    }

    #[test]
    fn single_normal_beat() {
        let bytes = [(100u16 | (1 << 10)).to_le_bytes(), [0, 0]].concat();
        let ev = decode_annotations(&bytes).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].sample_index, 100);
        assert_eq!(ev[0].symbol(), 'N');
    }

    #[test]
    fn empty_annotation_stream() {
        assert!(decode_annotations(&[0, 0]).unwrap().is_empty());
    }

    #[test]
    fn cumulative_increments() {
        let bytes = encode_annotations(&[(10, 24), (15, 27)]);
        let ev = decode_annotations(&bytes).unwrap();
        let idx: Vec<u64> = ev.iter().map(|e| e.sample_index).collect();
        assert_eq!(idx, vec![10, 15]);
        assert_eq!(ev[0].symbol(), 'p');
        assert_eq!(ev[1].symbol(), 't');
    }

    #[test]
    fn skip_and_modifiers() {
        let mut bytes = encode_annotations(&[(70_000, 1)]);
        bytes.truncate(bytes.len() - 2);
        // CHN 1 then AUX "(N" (odd length, padded)
        bytes.extend_from_slice(&(((CHN as u16) << 10) | 1).to_le_bytes());
        bytes.extend_from_slice(&(((AUX as u16) << 10) | 3).to_le_bytes());
        bytes.extend_from_slice(b"(N\0\0");
        bytes.extend_from_slice(&(((5u16) << 10) | 10).to_le_bytes());
        bytes.extend_from_slice(&[0, 0]);
        let ev = decode_annotations(&bytes).unwrap();
        assert_eq!(ev[0].sample_index, 70_000);
        assert_eq!(ev[0].chan, 1);
        assert_eq!(ev[0].aux.as_deref(), Some("(N"));
        assert_eq!(ev[1].sample_index, 70_010);
        assert_eq!(ev[1].symbol(), 'V');
        // channel is sticky
        assert_eq!(ev[1].chan, 1);
    }

    #[test]
    fn missing_terminator() {
        let bytes = (100u16 | (1 << 10)).to_le_bytes();
        assert!(matches!(
            decode_annotations(&bytes),
            Err(WfdbError::Annotation { .. })
        ));
    }

    #[test]
    fn aux_overrun() {
        let mut bytes = (100u16 | (1 << 10)).to_le_bytes().to_vec();
        bytes.extend_from_slice(&(((AUX as u16) << 10) | 40).to_le_bytes());
        bytes.extend_from_slice(b"abc");
        let err = decode_annotations(&bytes).unwrap_err();
        assert!(err.to_string().contains("overruns"), "{err}");
    }

    #[test]
    fn symbol_table_roundtrip() {
        for code in 0u8..50 {
            if let Some(s) = code_symbol(code) {
                assert_eq!(symbol_code(s), Some(code));
            }
        }
        assert!(is_beat_code(symbol_code('N').unwrap()));
        assert!(!is_beat_code(symbol_code('p').unwrap()));
        assert!(!is_beat_code(symbol_code('(').unwrap()));
    }

    #[test]
    fn bounds_check() {
        let ev = decode_annotations(&encode_annotations(&[(5, 1), (9, 1)])).unwrap();
        assert!(check_annotation_bounds(&ev, 10).is_ok());
        assert!(check_annotation_bounds(&ev, 9).is_err());
    }
}
