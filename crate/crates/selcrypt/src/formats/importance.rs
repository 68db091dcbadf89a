use selcrypt_core::pss::{DominatedPartition, ImportanceMap};

use super::{FormatError, Reader, Result, Writer};

const MAGIC: &str = "SIMP";

/// Importance maps plus, optionally, the tiered dominated set cut from them.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceFile {
    pub maps: Vec<ImportanceMap>,
    pub partition: Option<DominatedPartition>,
}

/// `SIMP`: per-layer records of `(index u32, importance f64)` pairs, then a
/// flag byte and, if set, the partition (tiers, layers, per-cell indices).
pub fn write_importance(file: &ImportanceFile) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u16(file.maps.len());
    for m in &file.maps {
        w.u16(m.layer);
        w.u32(m.values.len());
        for (j, &p) in m.values.iter().enumerate() {
            w.u32(j);
            w.f64(p);
        }
    }
    match &file.partition {
        None => w.u8(0),
        Some(p) => {
            w.u8(1);
            w.u8(u8::try_from(p.tiers).expect("at most 255 tiers"));
            w.u16(p.layers.len());
            p.layers.iter().for_each(|&l| w.u16(l));
            p.cells.iter().flatten().for_each(|c| w.indices(c));
        }
    }
    w.buf
}

pub fn read_importance(bytes: &[u8]) -> Result<ImportanceFile> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let records = r.u16("record count")? as usize;
    let mut maps = Vec::with_capacity(records);
    for k in 0..records {
        let what = format!("record {k}");
        let layer = r.u16(&what)? as usize;
        let n = r.u32(&what)? as usize;
        let mut values = vec![f64::NAN; n];
        for _ in 0..n {
            let at = r.offset();
            let j = r.u32(&what)? as usize;
            let p = r.f64(&what)?;
            if j >= n || !values[j].is_nan() || !(0.0..=1.0).contains(&p) {
                return Err(FormatError::Invalid { offset: at, what, detail: format!("pair ({j}, {p}) is out of range or repeated") });
            }
            values[j] = p;
        }
        maps.push(ImportanceMap { layer, values });
    }
    let partition = match r.u8("partition flag")? {
        0 => None,
        1 => {
            let tiers = r.u8("tier count")? as usize;
            if tiers == 0 {
                return Err(r.invalid("tier count", "zero tiers"));
            }
            let nl = r.u16("partition layers")? as usize;
            let layers = (0..nl).map(|_| r.u16("partition layers").map(usize::from)).collect::<Result<Vec<_>>>()?;
            let mut cells = Vec::with_capacity(tiers);
            for m in 0..tiers {
                let tier = (0..nl).map(|i| r.indices(&format!("tier {} cell {i}", m + 1))).collect::<Result<Vec<_>>>()?;
                cells.push(tier);
            }
            Some(DominatedPartition { tiers, layers, cells })
        }
        f => return Err(r.invalid("partition flag", format!("expected 0 or 1, got {f}"))),
    };
    r.finish()?;
    Ok(ImportanceFile { maps, partition })
}
