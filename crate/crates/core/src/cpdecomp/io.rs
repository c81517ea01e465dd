use super::{CpError, CpModel, Result};
use nalgebra::DMatrix;
use std::path::Path;

const MAGIC: &[u8; 4] = b"CPM1";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CpError + '_ {
    move |source| CpError::Io { path: path.display().to_string(), source }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| CpError::Format("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| CpError::Format("length overflow".into()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| CpError::Format("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend(m[(r, c)].to_le_bytes());
        }
    }
}

impl CpModel {
    /// Layout (little endian): `CPM1`, u32 version, u64 N, I, J, R, seed,
    /// trace length, the fit trace, then A, B, C row-major as f64, then each
    /// id as u64 length + UTF-8, then a CRC32 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(VERSION.to_le_bytes());
        for v in [self.a.nrows(), self.b.nrows(), self.c.nrows(), self.rank()] {
            out.extend((v as u64).to_le_bytes());
        }
        out.extend(self.seed.to_le_bytes());
        out.extend((self.fit_trace.len() as u64).to_le_bytes());
        for f in &self.fit_trace {
            out.extend(f.to_le_bytes());
        }
        for m in [&self.a, &self.b, &self.c] {
            put_matrix(&mut out, m);
        }
        for id in &self.ids {
            out.extend((id.len() as u64).to_le_bytes());
            out.extend(id.as_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend(crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 12 || &buf[..4] != MAGIC {
            return Err(CpError::Format("bad magic".into()));
        }
        let (body, tail) = buf.split_at(buf.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().expect("4 bytes")) {
            return Err(CpError::Format("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CpError::Format(format!("unsupported version {version}")));
        }
        let mut cur = Cursor { buf: body, pos: 8 };
        let (n, ni, nj, rank) = (cur.len()?, cur.len()?, cur.len()?, cur.len()?);
        let seed = cur.u64()?;
        let trace_len = cur.len()?;
        let fit_trace = cur.f64s(trace_len)?;
        let mut matrix = |rows: usize| -> Result<DMatrix<f64>> {
            let n = rows.checked_mul(rank).ok_or_else(|| CpError::Format("length overflow".into()))?;
            Ok(DMatrix::from_row_slice(rows, rank, &cur.f64s(n)?))
        };
        let (a, b, c) = (matrix(n)?, matrix(ni)?, matrix(nj)?);
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = cur.len()?;
            let s = std::str::from_utf8(cur.take(len)?).map_err(|_| CpError::Format("id is not UTF-8".into()))?;
            ids.push(s.to_string());
        }
        if cur.pos != body.len() {
            return Err(CpError::Format("trailing bytes".into()));
        }
        Ok(Self { a, b, c, fit_trace, seed, ids })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(io_err(path))?)
    }
}

/// `image_id,comp_1,...,comp_R`, one row per loading row.
pub fn write_loadings_csv(path: &Path, ids: &[String], loadings: &DMatrix<f64>) -> Result<()> {
    if ids.len() != loadings.nrows() {
        return Err(CpError::Shape(format!("{} ids for {} loading rows", ids.len(), loadings.nrows())));
    }
    let err = |e: csv::Error| CpError::Csv(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["image_id".to_string()];
    header.extend((1..=loadings.ncols()).map(|r| format!("comp_{r}")));
    w.write_record(&header).map_err(err)?;
    for (k, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(loadings.row(k).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_loadings_csv(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let err = |e: csv::Error| CpError::Csv(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    let width = r.headers().map_err(err)?.len().saturating_sub(1);
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(err)?;
        ids.push(rec[0].to_string());
        for s in rec.iter().skip(1) {
            values.push(s.parse::<f64>().map_err(|_| CpError::Csv(format!("not a number: {s:?}")))?);
        }
    }
    Ok((ids.clone(), DMatrix::from_row_slice(ids.len(), width, &values)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> CpModel {
        CpModel {
            a: DMatrix::from_fn(3, 2, |r, c| r as f64 - c as f64 * 0.1),
            b: DMatrix::from_fn(4, 2, |r, c| (r * c) as f64 / 7.0),
            c: DMatrix::from_fn(5, 2, |r, c| (r + c) as f64 * 1e-3),
            fit_trace: vec![0.5, 0.75, 0.8],
            seed: 42,
            ids: vec!["x".into(), "yy".into(), "zzz".into()],
        }
    }

    #[test]
    fn model_round_trip() {
        let m = model();
        assert_eq!(CpModel::from_bytes(&m.to_bytes()).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.cpm");
        m.save(&p).unwrap();
        assert_eq!(CpModel::load(&p).unwrap(), m);
    }

    #[test]
    fn corrupt_model_rejected() {
        let mut bytes = model().to_bytes();
        bytes[20] ^= 1;
        assert!(matches!(CpModel::from_bytes(&bytes), Err(CpError::Format(_))));
        assert!(CpModel::from_bytes(b"nope").is_err());
        let good = model().to_bytes();
        assert!(CpModel::from_bytes(&good[..good.len() - 9]).is_err());
    }

    #[test]
    fn loadings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        let m = model();
        write_loadings_csv(&p, &m.ids, &m.a).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("image_id,comp_1,comp_2\nx,"));
        assert_eq!(read_loadings_csv(&p).unwrap(), (m.ids.clone(), m.a.clone()));
        assert!(write_loadings_csv(&p, &m.ids[..2], &m.a).is_err());
    }
}
