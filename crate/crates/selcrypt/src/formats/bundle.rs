use selcrypt_core::dprm::{Bounds, CipherBundle, LayerStats, SecretKey};
use selcrypt_core::pss::DominatedPartition;

use super::{FormatError, Reader, Result, Writer};

const MAGIC: &str = "SBND";

/// `SBND`: everything the provider keeps back. Tier count, the model layer
/// of each position, mu, sigma, mask scale, the keys, then per tier and
/// layer a bounds flag, the bounds and the locations.
pub fn write_bundle(b: &CipherBundle) -> Vec<u8> {
    let part = &b.partition;
    let mut w = Writer::new(MAGIC);
    w.u8(u8::try_from(part.tiers).expect("tier count fits u8"));
    w.u16(part.layers.len());
    part.layers.iter().for_each(|&l| w.u16(l));
    w.f64s(&b.stats.mu);
    w.f64s(&b.stats.sigma);
    w.f64(b.rho);
    w.u8(u8::try_from(b.keys.len()).expect("key count fits u8"));
    b.keys.iter().for_each(|k| w.buf.extend_from_slice(&k.0));
    for (tier, bounds) in part.cells.iter().zip(&b.bounds) {
        for (cell, bound) in tier.iter().zip(bounds) {
            match bound {
                Some(bd) => {
                    w.u8(1);
                    w.f64(bd.lower);
                    w.f64(bd.upper);
                }
                None => w.u8(0),
            }
            w.indices(cell);
        }
    }
    w.buf
}

pub fn read_bundle(bytes: &[u8]) -> Result<CipherBundle> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let tiers = r.u8("tier count")? as usize;
    let l = r.u16("layer count")? as usize;
    let layers = (0..l).map(|_| r.u16("layer list").map(usize::from)).collect::<Result<Vec<_>>>()?;
    let mu = r.f64s(l, "mu")?;
    let sigma = r.f64s(l, "sigma")?;
    let rho = r.f64("mask scale")?;
    let nk = r.u8("key count")? as usize;
    let keys = (1..=nk).map(|m| r.bytes(32, &format!("key of tier {m}")).map(|k| SecretKey(k.try_into().unwrap()))).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(tiers);
    let mut bounds = Vec::with_capacity(tiers);
    for m in 1..=tiers {
        let (mut tc, mut tb) = (Vec::with_capacity(l), Vec::with_capacity(l));
        for i in 0..l {
            let what = format!("tier {m} layer {i}");
            let b = match r.u8(&what)? {
                0 => None,
                1 => Some(Bounds { lower: r.f64(&what)?, upper: r.f64(&what)? }),
                f => return Err(FormatError::Invalid { offset: r.offset() - 1, what, detail: format!("bounds flag {f}") }),
            };
            tb.push(b);
            tc.push(r.indices(&what)?);
        }
        cells.push(tc);
        bounds.push(tb);
    }
    r.finish()?;
    Ok(CipherBundle { keys, bounds, stats: LayerStats { mu, sigma }, rho, partition: DominatedPartition { tiers, layers, cells } })
}
