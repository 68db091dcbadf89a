use selcrypt_core::dprm::{Bounds, LayerStats, SecretKey};
use selcrypt_core::permission::{Permission, PermissionItem};

use super::{FormatError, Reader, Result, Writer};

const MAGIC: &str = "SPRM";

/// `SPRM`: level, tier count, layer count, shared mu and sigma, the mask
/// scale, then per released tier the key, the lower and upper bounds per
/// layer and each layer's locations. Layers a tier does not touch store
/// zero bounds and no locations.
pub fn write_permission(p: &Permission) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u8(u8::try_from(p.level).expect("level fits u8"));
    w.u8(u8::try_from(p.tiers).expect("tier count fits u8"));
    w.u16(p.layer_count());
    w.f64s(&p.stats.mu);
    w.f64s(&p.stats.sigma);
    w.f64(p.rho);
    for item in &p.items {
        w.buf.extend_from_slice(&item.key.0);
        let b: Vec<Bounds> = item.bounds.iter().map(|b| b.unwrap_or(Bounds { lower: 0.0, upper: 0.0 })).collect();
        b.iter().for_each(|b| w.f64(b.lower));
        b.iter().for_each(|b| w.f64(b.upper));
        item.cells.iter().for_each(|c| w.indices(c));
    }
    w.buf
}

pub fn read_permission(bytes: &[u8]) -> Result<Permission> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let level = r.u8("level")? as usize;
    let tiers = r.u8("tier count")? as usize;
    if level == 0 || level > tiers {
        return Err(r.invalid("level", format!("level {level} outside 1..={tiers}")));
    }
    let l = r.u16("layer count")? as usize;
    let mu = r.f64s(l, "mu")?;
    let sigma = r.f64s(l, "sigma")?;
    let rho = r.f64("mask scale")?;
    let mut items = Vec::with_capacity(level);
    for m in 1..=level {
        let key = SecretKey(r.bytes(32, &format!("key of tier {m}"))?.try_into().unwrap());
        let lower = r.f64s(l, &format!("lower bounds of tier {m}"))?;
        let upper = r.f64s(l, &format!("upper bounds of tier {m}"))?;
        let cells = (0..l).map(|i| r.indices(&format!("locations of tier {m} layer {i}"))).collect::<Result<Vec<_>>>()?;
        let bounds = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (!c.is_empty()).then_some(Bounds { lower: lower[i], upper: upper[i] }))
            .collect();
        items.push(PermissionItem { key, bounds, cells });
    }
    let end = r.offset();
    r.finish()?;
    let p = Permission { level, tiers, stats: LayerStats { mu, sigma }, rho, items };
    p.validate().map_err(|e| FormatError::Invalid { offset: end, what: "permission".into(), detail: e.to_string() })?;
    Ok(p)
}
