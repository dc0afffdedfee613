//! MIPT trace files: residual-stream snapshots `h_0 ..= h_T` for `S` samples.
//!
//! Layout (all integers little-endian `u32`):
//!
//! | offset | field                      |
//! |--------|----------------------------|
//! | 0      | magic `"MIPT"`             |
//! | 4      | version (1)                |
//! | 8      | block count `T`            |
//! | 12     | sample count `S`           |
//! | 16     | hidden width `D`           |
//! | 20     | dtype code (0 = `f32`)     |
//! | 24     | 8 reserved zero bytes      |
//! | 32     | payload                    |
//!
//! The payload holds `T + 1` snapshots in order, each `S x D` row-major
//! little-endian `f32`. Block `i` (1-based) reads snapshot `i - 1` and writes
//! snapshot `i`, so a block's input is the previous block's output.
//!
//! Free-form provenance lives next to the trace in `<path>.meta.json`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"MIPT";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;
pub const DTYPE_F32: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TraceHeader {
    pub version: u32,
    pub num_blocks: u32,
    pub num_samples: u32,
    pub hidden_dim: u32,
    pub dtype_code: u32,
}

impl TraceHeader {
    fn for_shape(num_blocks: usize, num_samples: usize, hidden_dim: usize) -> Result<Self> {
        let narrow = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::InvalidHeader(format!("{what} {v} does not fit in u32")))
        };
        let header = TraceHeader {
            version: FORMAT_VERSION,
            num_blocks: narrow(num_blocks, "block count")?,
            num_samples: narrow(num_samples, "sample count")?,
            hidden_dim: narrow(hidden_dim, "hidden width")?,
            dtype_code: DTYPE_F32,
        };
        header.check_shape()?;
        Ok(header)
    }

    fn check_shape(&self) -> Result<()> {
        if self.num_blocks < 1 {
            return Err(Error::InvalidHeader("block count must be at least 1".into()));
        }
        if self.num_samples < 2 {
            return Err(Error::InvalidHeader(format!(
                "sample count must be at least 2, got {}",
                self.num_samples
            )));
        }
        if self.hidden_dim < 1 {
            return Err(Error::InvalidHeader("hidden width must be at least 1".into()));
        }
        Ok(())
    }

    /// Payload size in bytes, `(T + 1) * S * D * 4`.
    pub fn payload_len(&self) -> u64 {
        (u64::from(self.num_blocks) + 1)
            * u64::from(self.num_samples)
            * u64::from(self.hidden_dim)
            * 4
    }

    /// Total file size including the header.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len()
    }

    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        let fields = [
            self.version,
            self.num_blocks,
            self.num_samples,
            self.hidden_dim,
            self.dtype_code,
        ];
        for (i, v) in fields.iter().enumerate() {
            out[4 + 4 * i..8 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8; HEADER_LEN]) -> Result<Self> {
        let magic: [u8; 4] = bytes[0..4].try_into().expect("4-byte slice");
        if magic != MAGIC {
            return Err(Error::BadMagic { found: magic });
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4-byte slice"));
        let header = TraceHeader {
            version: field(0),
            num_blocks: field(1),
            num_samples: field(2),
            hidden_dim: field(3),
            dtype_code: field(4),
        };
        if header.version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(header.version));
        }
        if header.dtype_code != DTYPE_F32 {
            return Err(Error::InvalidHeader(format!(
                "unsupported dtype code {}",
                header.dtype_code
            )));
        }
        if bytes[24..32].iter().any(|&b| b != 0) {
            return Err(Error::InvalidHeader("reserved bytes must be zero".into()));
        }
        header.check_shape()?;
        Ok(header)
    }
}

/// An immutable calibration trace.
#[derive(Clone, Debug)]
pub struct Trace {
    header: TraceHeader,
    /// `(T + 1) x S x D`, standard layout.
    snapshots: Array3<f32>,
    provenance: BTreeMap<String, String>,
}

impl Trace {
    /// Builds a validated trace from a `(T + 1) x S x D` array.
    pub fn from_snapshots(snapshots: Array3<f32>) -> Result<Self> {
        let trace = Self::from_snapshots_unchecked(snapshots)?;
        trace.validate()?;
        Ok(trace)
    }

    fn from_snapshots_unchecked(snapshots: Array3<f32>) -> Result<Self> {
        let (layers, samples, dim) = snapshots.dim();
        if layers < 2 {
            return Err(Error::InvalidHeader(format!(
                "need at least two snapshots (one block), got {layers}"
            )));
        }
        let header = TraceHeader::for_shape(layers - 1, samples, dim)?;
        let snapshots = if snapshots.is_standard_layout() {
            snapshots
        } else {
            snapshots.as_standard_layout().into_owned()
        };
        Ok(Trace {
            header,
            snapshots,
            provenance: BTreeMap::new(),
        })
    }

    pub fn with_provenance(mut self, provenance: BTreeMap<String, String>) -> Self {
        self.provenance = provenance;
        self
    }

    /// Checks that every value is finite, reporting the first offender in
    /// (snapshot, row, column) order.
    pub fn validate(&self) -> Result<()> {
        let (_, samples, dim) = self.snapshots.dim();
        let data = self.snapshots.as_slice().expect("standard layout");
        match data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(flat) => Err(Error::NonFinite {
                snapshot: flat / (samples * dim),
                row: (flat / dim) % samples,
                column: flat % dim,
            }),
        }
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn num_blocks(&self) -> usize {
        self.header.num_blocks as usize
    }

    pub fn num_samples(&self) -> usize {
        self.header.num_samples as usize
    }

    pub fn hidden_dim(&self) -> usize {
        self.header.hidden_dim as usize
    }

    pub fn provenance(&self) -> &BTreeMap<String, String> {
        &self.provenance
    }

    pub fn provenance_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.provenance
    }

    pub fn snapshots(&self) -> &Array3<f32> {
        &self.snapshots
    }

    /// Snapshot `h_index`, `0 <= index <= T`.
    pub fn snapshot(&self, index: usize) -> Result<ArrayView2<'_, f32>> {
        if index > self.num_blocks() {
            return Err(Error::Bounds(format!(
                "snapshot {index} outside 0..={}",
                self.num_blocks()
            )));
        }
        Ok(self.snapshots.index_axis(Axis(0), index))
    }

    /// Input of block `start` and output of block `end`: `(h_{start-1}, h_end)`.
    pub fn layer_pair(
        &self,
        start: usize,
        end: usize,
    ) -> Result<(ArrayView2<'_, f32>, ArrayView2<'_, f32>)> {
        let t = self.num_blocks();
        if start < 1 || start > end || end > t {
            return Err(Error::Bounds(format!(
                "span [{start}, {end}] must satisfy 1 <= start <= end <= {t}"
            )));
        }
        Ok((self.snapshot(start - 1)?, self.snapshot(end)?))
    }

    /// Bitwise equality of headers and payloads. Provenance is ignored.
    pub fn bit_eq(&self, other: &Trace) -> bool {
        self.header == other.header
            && self
                .snapshots
                .iter()
                .zip(other.snapshots.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// SHA-256 of the encoded file (header and payload), hex encoded.
    pub fn fingerprint(&self) -> String {
        struct HashSink(Sha256);
        impl Write for HashSink {
            fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
                self.0.update(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> io::Result<()> {
                Ok(())
            }
        }
        let mut sink = io::BufWriter::with_capacity(1 << 16, HashSink(Sha256::new()));
        write_trace(self, &mut sink).expect("hashing never fails");
        let sink = sink.into_inner().unwrap_or_else(|_| unreachable!());
        hex(&sink.0.finalize())
    }

    /// Writes the trace and, when provenance is present, its sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|source| Error::Io { offset: 0, source })?;
        let mut sink = BufWriter::new(file);
        write_trace(self, &mut sink)?;
        sink.flush().map_err(|source| Error::Io {
            offset: self.header.file_len(),
            source,
        })?;
        if !self.provenance.is_empty() {
            write_sidecar(&sidecar_path(path), &self.provenance)?;
        }
        Ok(())
    }

    /// Reads and validates a trace, attaching the sidecar when one exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io { offset: 0, source })?;
        let trace = read_trace(BufReader::new(file))?;
        let meta = sidecar_path(path);
        if meta.exists() {
            Ok(trace.with_provenance(read_sidecar(&meta)?))
        } else {
            Ok(trace)
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Tracks how many bytes reached the sink so failures can report an offset.
struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<()> {
        self.inner.write_all(bytes).map_err(|source| Error::Io {
            offset: self.written,
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }
}

pub fn write_trace<W: Write>(trace: &Trace, sink: W) -> Result<()> {
    let mut out = CountingWriter {
        inner: sink,
        written: 0,
    };
    out.put(&trace.header.encode())?;
    let data = trace.snapshots.as_slice().expect("standard layout");
    let mut buf = Vec::with_capacity(64 * 1024);
    for chunk in data.chunks(16 * 1024) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.put(&buf)?;
    }
    Ok(())
}

/// Reads a trace and rejects non-finite payload values.
pub fn read_trace<R: Read>(source: R) -> Result<Trace> {
    let trace = read_trace_unvalidated(source)?;
    trace.validate()?;
    Ok(trace)
}

/// Reads header and payload without the finiteness scan, for diagnostics.
pub fn read_trace_unvalidated<R: Read>(mut source: R) -> Result<Trace> {
    let mut head = [0u8; HEADER_LEN];
    let got = read_up_to(&mut source, &mut head)?;
    if got >= 4 && head[0..4] != MAGIC {
        return Err(Error::BadMagic {
            found: head[0..4].try_into().expect("4-byte slice"),
        });
    }
    if got < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: got as u64,
        });
    }
    let header = TraceHeader::decode(&head)?;

    let expected = header.payload_len();
    let mut payload = Vec::new();
    source
        .read_to_end(&mut payload)
        .map_err(|source| Error::Io {
            offset: HEADER_LEN as u64,
            source,
        })?;
    if payload.len() as u64 != expected {
        return Err(Error::Truncated {
            expected: header.file_len(),
            actual: HEADER_LEN as u64 + payload.len() as u64,
        });
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
        .collect();
    let shape = (
        header.num_blocks as usize + 1,
        header.num_samples as usize,
        header.hidden_dim as usize,
    );
    let snapshots = Array3::from_shape_vec(shape, values)
        .map_err(|e| Error::Invariant(format!("payload reshape: {e}")))?;
    Ok(Trace {
        header,
        snapshots,
        provenance: BTreeMap::new(),
    })
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(source) => {
                return Err(Error::Io {
                    offset: filled as u64,
                    source,
                })
            }
        }
    }
    Ok(filled)
}

/// `<trace path>.meta.json`
pub fn sidecar_path(path: impl AsRef<Path>) -> PathBuf {
    let mut name = path.as_ref().as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_sidecar(path: &Path, provenance: &BTreeMap<String, String>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(provenance)
        .map_err(|e| Error::Sidecar(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io { offset: 0, source })
}

/// Reads a flat JSON object. Numbers and booleans are kept in their JSON
/// spelling; nested values are rejected.
pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { offset: 0, source })?;
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)
        .map_err(|e| Error::Sidecar(format!("{}: {e}", path.display())))?;
    map.into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k, s)),
            serde_json::Value::Number(_) | serde_json::Value::Bool(_) | serde_json::Value::Null => {
                Ok((k, v.to_string()))
            }
            _ => Err(Error::Sidecar(format!(
                "{}: key {k:?} is not a scalar",
                path.display()
            ))),
        })
        .collect()
}
