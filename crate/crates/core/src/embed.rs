//! The four embedding tables, their initialization and binary snapshots.
//!
//! Snapshot layout (little-endian):
//!
//! ```text
//! "USTR" | u32 version=1 | u32 k
//! for region, hour, keyword, user: u32 count | count*k f32
//! f64 lat_min | f64 lat_max | f64 lon_min | f64 lon_max | f64 cell_m | i32 tz_offset_min
//! i64 timestamp
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::discretize::{make_grid, BoundingBox, GridSpec};
use crate::error::{Error, Result};
use crate::unit::{Modality, UnitId};
use crate::vecmath;

pub const MAGIC: &[u8; 4] = b"USTR";
pub const VERSION: u32 = 1;

/// Draw one k-dimensional vector, each component uniform in `[-0.5/k, 0.5/k]`.
pub fn init_vector<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f32> {
    let mut v = vec![0.0; k];
    fill_init(&mut v, rng);
    v
}

fn fill_init<R: Rng + ?Sized>(v: &mut [f32], rng: &mut R) {
    let k = v.len() as f32;
    for x in v {
        *x = (rng.random::<f32>() - 0.5) / k;
    }
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    modality: Modality,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(modality: Modality, dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        EmbeddingTable {
            modality,
            dim,
            data: Vec::new(),
        }
    }

    pub fn from_rows(modality: Modality, dim: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len() % dim, 0);
        EmbeddingTable {
            modality,
            dim,
            data,
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Append freshly initialized rows up to `new_len`. Existing rows are untouched.
    pub fn grow<R: Rng + ?Sized>(&mut self, new_len: usize, rng: &mut R) -> Result<()> {
        let old = self.len();
        if new_len < old {
            return Err(Error::Shrink {
                modality: self.modality.name(),
                old,
                new: new_len,
            });
        }
        self.data.resize(new_len * self.dim, 0.0);
        for i in old..new_len {
            fill_init(self.row_mut(i), rng);
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(p) => Err(Error::NonFinite {
                modality: self.modality.name(),
                row: p / self.dim,
            }),
        }
    }
}

/// The region, hour, keyword and user tables sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    dim: usize,
    tables: [EmbeddingTable; 4],
}

impl Embeddings {
    pub fn new(dim: usize) -> Self {
        Embeddings {
            dim,
            tables: Modality::ALL.map(|m| EmbeddingTable::new(m, dim)),
        }
    }

    pub fn from_tables(tables: [EmbeddingTable; 4]) -> Result<Self> {
        let dim = tables[0].dim;
        for (t, m) in tables.iter().zip(Modality::ALL) {
            if t.modality != m || t.dim != dim {
                return Err(Error::Config(
                    "tables out of order or with mixed dimensions".into(),
                ));
            }
        }
        Ok(Embeddings { dim, tables })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn table(&self, m: Modality) -> &EmbeddingTable {
        &self.tables[m.index()]
    }

    pub fn table_mut(&mut self, m: Modality) -> &mut EmbeddingTable {
        &mut self.tables[m.index()]
    }

    pub fn len(&self, m: Modality) -> usize {
        self.table(m).len()
    }

    pub fn vector(&self, u: UnitId) -> &[f32] {
        self.table(u.modality).row(u.row())
    }

    pub fn vector_mut(&mut self, u: UnitId) -> &mut [f32] {
        self.table_mut(u.modality).row_mut(u.row())
    }

    pub fn has(&self, u: UnitId) -> bool {
        u.row() < self.len(u.modality)
    }

    pub fn dot(&self, a: UnitId, b: UnitId) -> f32 {
        vecmath::dot(self.vector(a), self.vector(b))
    }

    pub fn cosine(&self, a: UnitId, b: UnitId) -> f64 {
        cosine(self.vector(a), self.vector(b))
    }

    /// Grow `m` to at least `len` rows; never shrinks.
    pub fn ensure_len<R: Rng + ?Sized>(&mut self, m: Modality, len: usize, rng: &mut R) {
        if len > self.len(m) {
            self.table_mut(m)
                .grow(len, rng)
                .expect("growth is monotone");
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        self.tables
            .iter()
            .try_for_each(EmbeddingTable::check_finite)
    }
}

/// Embeddings at one point of the stream together with the grid they index.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub timestamp: i64,
    pub embeddings: Embeddings,
    pub grid: GridSpec,
    pub tz_offset_min: i32,
}

impl Snapshot {
    pub fn validate(&self) -> Result<()> {
        self.embeddings.check_finite()?;
        let regions = self.embeddings.len(Modality::Region);
        if regions != self.grid.n_regions() {
            return Err(Error::Config(format!(
                "region table has {regions} rows but the grid has {} cells",
                self.grid.n_regions()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut w = BufWriter::new(w);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.embeddings.dim() as u32).to_le_bytes())?;
        for m in Modality::ALL {
            let t = self.embeddings.table(m);
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            for x in t.as_slice() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        let b = self.grid.bbox;
        for v in [b.lat_min, b.lat_max, b.lon_min, b.lon_max, self.grid.cell_m] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.tz_offset_min.to_le_bytes())?;
        w.write_all(&self.timestamp.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = OffsetReader {
            inner: BufReader::new(r),
            offset: 0,
        };
        let mut magic = [0u8; 4];
        r.fill(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::snapshot(0, "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::snapshot(4, format!("unsupported version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::snapshot(8, "zero dimension"));
        }
        let mut tables = Vec::with_capacity(4);
        for m in Modality::ALL {
            let count = r.u32()? as usize;
            let mut data = Vec::with_capacity(count.saturating_mul(dim).min(1 << 24));
            for _ in 0..count * dim {
                data.push(f32::from_le_bytes(r.array()?));
            }
            tables.push(EmbeddingTable::from_rows(m, dim, data));
        }
        let tables: [EmbeddingTable; 4] = tables.try_into().expect("four modalities");
        let mut g = [0.0f64; 5];
        for v in &mut g {
            *v = f64::from_le_bytes(r.array()?);
        }
        let tz_offset_min = i32::from_le_bytes(r.array()?);
        let timestamp = i64::from_le_bytes(r.array()?);
        let end = r.offset;
        let mut probe = [0u8; 1];
        if r.inner.read(&mut probe)? != 0 {
            return Err(Error::snapshot(end, "trailing bytes"));
        }
        let grid = make_grid(BoundingBox::new(g[0], g[1], g[2], g[3]), g[4])
            .map_err(|e| Error::snapshot(end, e.to_string()))?;
        let snap = Snapshot {
            timestamp,
            embeddings: Embeddings::from_tables(tables)?,
            grid,
            tz_offset_min,
        };
        snap.validate()
            .map_err(|e| Error::snapshot(end, e.to_string()))?;
        Ok(snap)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.offset += buf.len() as u64;
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(Error::snapshot(self.offset, "truncated file"))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
}
