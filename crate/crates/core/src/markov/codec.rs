//! Canonical binary encoding of a [`MarkovModel`].
//!
//! Layout (little endian):
//!
//! ```text
//! header  "FMKV" | version u8 | mode u8 | end_of_trip u8 | utc_offset i64 | tables u32
//!         per table: order u8 | day groups u8 | time groups u8 | weight f64 | contexts u32
//! body    per table, per context (sorted):
//!           history node ids u16 x order | day bucket u16 | time bucket u16
//!           per target (sorted): id u32 | count u32 | stay_sum f64 | stay_count u32
//! ```
//!
//! Bit 31 of a target id marks the last target of a context; EoT is encoded
//! as id `0x7fff_ffff`. The body length equals
//! [`MarkovModel::memory_bytes`].

use super::bucket::{DaySplit, TimeSplit};
use super::model::{MarkovModel, Mode};
use super::table::{ContextKey, Record, SubModelSpec};
use super::{MarkovError, Target};
use crate::topology::NodeId;

const MAGIC: &[u8; 4] = b"FMKV";
const VERSION: u8 = 1;
const EOT_ID: u32 = 0x7fff_ffff;
const LAST_FLAG: u32 = 0x8000_0000;

fn codec(msg: impl Into<String>) -> MarkovError {
    MarkovError::Codec(msg.into())
}

/// Encodes the tables only; this is what memory accounting measures.
pub fn encode_tables(model: &MarkovModel) -> Result<Vec<u8>, MarkovError> {
    let mut out = Vec::with_capacity(model.memory_bytes());
    for sub in &model.submodels {
        for (key, targets) in sub.table.sorted_entries() {
            for node in &key.history {
                let id = u16::try_from(node.0).map_err(|_| codec(format!("node id {node} exceeds u16")))?;
                out.extend_from_slice(&id.to_le_bytes());
            }
            out.extend_from_slice(&(key.day_bucket as u16).to_le_bytes());
            out.extend_from_slice(&(key.time_bucket as u16).to_le_bytes());
            for (i, (target, record)) in targets.iter().enumerate() {
                let mut id = match target {
                    Target::Node(n) if n.0 < EOT_ID => n.0,
                    Target::Node(n) => return Err(codec(format!("node id {n} too large"))),
                    Target::EoT => EOT_ID,
                };
                if i + 1 == targets.len() {
                    id |= LAST_FLAG;
                }
                out.extend_from_slice(&id.to_le_bytes());
                out.extend_from_slice(&record.count.to_le_bytes());
                out.extend_from_slice(&record.stay_sum.to_le_bytes());
                out.extend_from_slice(&record.stay_count.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn encode_model(model: &MarkovModel) -> Result<Vec<u8>, MarkovError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match model.mode {
        Mode::Fixed => 0,
        Mode::Variable => 1,
        Mode::Fusion => 2,
    });
    out.push(model.end_of_trip as u8);
    out.extend_from_slice(&model.utc_offset_s.to_le_bytes());
    out.extend_from_slice(&(model.submodels.len() as u32).to_le_bytes());
    for sub in &model.submodels {
        out.push(sub.spec.order as u8);
        out.push(sub.spec.day_split.groups());
        out.push(sub.spec.time_split.groups());
        out.extend_from_slice(&sub.spec.weight.to_le_bytes());
        out.extend_from_slice(&(sub.table.len() as u32).to_le_bytes());
    }
    out.extend(encode_tables(model)?);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], MarkovError> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| codec(format!("truncated input at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8, MarkovError> {
        Ok(self.take::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, MarkovError> {
        Ok(u16::from_le_bytes(self.take()?))
    }

    fn u32(&mut self) -> Result<u32, MarkovError> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64, MarkovError> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn i64(&mut self) -> Result<i64, MarkovError> {
        Ok(i64::from_le_bytes(self.take()?))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<MarkovModel, MarkovError> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>()? != MAGIC {
        return Err(codec("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(codec(format!("unsupported version {version}")));
    }
    let mode = match r.u8()? {
        0 => Mode::Fixed,
        1 => Mode::Variable,
        2 => Mode::Fusion,
        other => return Err(codec(format!("unknown mode {other}"))),
    };
    let end_of_trip = r.u8()? != 0;
    let utc_offset_s = r.i64()?;
    let tables = r.u32()? as usize;
    let mut specs = Vec::with_capacity(tables);
    let mut counts = Vec::with_capacity(tables);
    for _ in 0..tables {
        let order = r.u8()? as usize;
        let day_split = DaySplit::try_from(r.u8()?)?;
        let time_split = TimeSplit::try_from(r.u8()?)?;
        let weight = r.f64()?;
        specs.push(SubModelSpec {
            order,
            day_split,
            time_split,
            weight,
        });
        counts.push(r.u32()? as usize);
    }
    let mut model = MarkovModel::from_parts(mode, specs, end_of_trip, utc_offset_s)?;
    for (sub, contexts) in model.submodels.iter_mut().zip(counts) {
        for _ in 0..contexts {
            let history = (0..sub.spec.order)
                .map(|_| r.u16().map(|id| NodeId(id as u32)))
                .collect::<Result<Vec<_>, _>>()?;
            let day_bucket = r.u16()? as u8;
            let time_bucket = r.u16()? as u8;
            let mut targets = Vec::new();
            loop {
                let raw = r.u32()?;
                let id = raw & !LAST_FLAG;
                let target = if id == EOT_ID {
                    Target::EoT
                } else {
                    Target::Node(NodeId(id))
                };
                let record = Record {
                    count: r.u32()?,
                    stay_sum: r.f64()?,
                    stay_count: r.u32()?,
                };
                targets.push((target, record));
                if raw & LAST_FLAG != 0 {
                    break;
                }
            }
            sub.table.insert_raw(
                ContextKey {
                    history,
                    day_bucket,
                    time_bucket,
                },
                targets,
            );
        }
    }
    if r.pos != bytes.len() {
        return Err(codec(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::PredictorKind;
    use crate::traces::NodeVisit;

    fn trained() -> MarkovModel {
        let mut model = MarkovModel::new(&PredictorKind::fomm(3), true, 8 * 3600).unwrap();
        let trips = [[0u32, 1, 2, 3], [0, 1, 4, 3], [3, 2, 1, 0]];
        for (day, trip) in trips.iter().enumerate() {
            let visits: Vec<NodeVisit> = trip
                .iter()
                .enumerate()
                .map(|(i, &n)| NodeVisit::new(NodeId(n), i as i64 * 100, (i as i64 + 1) * 100 + day as i64))
                .collect();
            model.train_session(&visits, day as i64 * 86_400 + 3600);
        }
        model
    }

    #[test]
    fn body_size_matches_memory_metric() {
        let model = trained();
        let full = encode_model(&model).unwrap();
        let body = encode_tables(&model).unwrap();
        assert_eq!(body.len(), model.memory_bytes());
        assert_eq!(&full[full.len() - body.len()..], body.as_slice());
    }

    #[test]
    fn decode_restores_model() {
        let model = trained();
        let bytes = encode_model(&model).unwrap();
        let decoded = decode_model(&bytes).unwrap();
        assert_eq!(decoded, model);
        assert_eq!(encode_model(&decoded).unwrap(), bytes);
        for history in [&[NodeId(0)][..], &[NodeId(0), NodeId(1)], &[NodeId(2), NodeId(1), NodeId(0)]] {
            assert_eq!(decoded.predict(history, 3600), model.predict(history, 3600));
        }
    }

    #[test]
    fn corrupted_input_is_rejected() {
        let bytes = encode_model(&trained()).unwrap();
        assert!(decode_model(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_model(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_model(&extra).is_err());
    }

    #[test]
    fn empty_model_has_empty_body() {
        let model = MarkovModel::new(&PredictorKind::vomm(5), false, 0).unwrap();
        assert!(encode_tables(&model).unwrap().is_empty());
    }
}
