//! Map records: one JSON header line followed by little-endian `f64` node values.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DiscreteMap, Domain, DomainKind};
use crate::manifold::{EmbeddedManifold, ManifoldKind};

pub const MAP_FORMAT: &str = "widthlab-map";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapHeader {
    pub format: String,
    pub version: u32,
    pub domain: DomainKind,
    pub target: ManifoldKind,
    pub nodes: usize,
    pub dim: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("record does not match its header: {0}")]
    Mismatch(String),
}

pub fn write_map<W: Write>(u: &DiscreteMap, w: &mut W) -> Result<(), IoError> {
    let h = MapHeader {
        format: MAP_FORMAT.into(),
        version: FORMAT_VERSION,
        domain: u.domain.kind,
        target: u.target.kind.clone(),
        nodes: u.domain.num_nodes(),
        dim: u.dim(),
    };
    let line = serde_json::to_string(&h).map_err(|e| IoError::Header(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * u.values.len());
    for v in &u.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads one record. A domain already built for the same kind can be reused.
pub fn read_map<R: BufRead>(r: &mut R, reuse: Option<&Arc<Domain>>) -> Result<DiscreteMap, IoError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(IoError::Header("unexpected end of input".into()));
    }
    let h: MapHeader = serde_json::from_str(line.trim_end()).map_err(|e| IoError::Header(e.to_string()))?;
    if h.format != MAP_FORMAT || h.version != FORMAT_VERSION {
        return Err(IoError::Header(format!("unsupported format {} v{}", h.format, h.version)));
    }
    let domain = match reuse {
        Some(d) if d.kind == h.domain => d.clone(),
        _ => Arc::new(Domain::new(h.domain).map_err(|e| IoError::Mismatch(e.to_string()))?),
    };
    if domain.num_nodes() != h.nodes {
        return Err(IoError::Mismatch(format!("header says {} nodes, domain has {}", h.nodes, domain.num_nodes())));
    }
    let target = Arc::new(EmbeddedManifold::new(h.target).map_err(|e| IoError::Mismatch(e.to_string()))?);
    if target.ambient_dim != h.dim {
        return Err(IoError::Mismatch("target dimension differs from header".into()));
    }
    let mut bytes = vec![0u8; 8 * h.nodes * h.dim];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    DiscreteMap::from_values(domain, target, values).map_err(|e| IoError::Mismatch(e.to_string()))
}

/// CSV of the per-node energy density: `node,chart,c0,c1,x,y,z,density`.
/// The sphere embedding columns are empty for flat domains.
pub fn write_energy_density_csv<W: Write>(u: &DiscreteMap, w: &mut W) -> Result<(), IoError> {
    let dens = u.energy_density();
    writeln!(w, "node,chart,c0,c1,x,y,z,density")?;
    for (i, nd) in u.domain.nodes.iter().enumerate() {
        if u.domain.is_sphere() {
            let p = u.domain.sphere_pts[i];
            writeln!(w, "{i},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", nd.chart, nd.coord[0], nd.coord[1], p[0], p[1], p[2], dens[i])?;
        } else {
            writeln!(w, "{i},{},{:.12e},{:.12e},,,,{:.12e}", nd.chart, nd.coord[0], nd.coord[1], dens[i])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn map_record_round_trip() {
        let d = Arc::new(Domain::sphere(17).unwrap());
        let u = DiscreteMap::identity(d.clone()).unwrap();
        let mut buf = Vec::new();
        write_map(&u, &mut buf).unwrap();
        write_map(&u, &mut buf).unwrap();
        let mut cur = Cursor::new(buf);
        let a = read_map(&mut cur, None).unwrap();
        let b = read_map(&mut cur, Some(&a.domain)).unwrap();
        assert_eq!(a.values, u.values);
        assert_eq!(b.values, u.values);
        assert!(Arc::ptr_eq(&a.domain, &b.domain));
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let mut cur = Cursor::new(b"{\"format\":\"nope\"}\n".to_vec());
        assert!(read_map(&mut cur, None).is_err());
    }

    #[test]
    fn density_csv_has_one_row_per_node() {
        let d = Arc::new(Domain::disk(1.0, 9).unwrap());
        let t = Arc::new(EmbeddedManifold::affine(1, 1).unwrap());
        let u = DiscreteMap::from_fn(d.clone(), t, |i| vec![d.nodes[i].coord[0]]).unwrap();
        let mut buf = Vec::new();
        write_energy_density_csv(&u, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), d.num_nodes() + 1);
    }
}
