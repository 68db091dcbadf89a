//! JSON renderings of reports and permissions.

use serde_json::{json, Value};

use selcrypt_core::analysis::ImperceptibilityReport;
use selcrypt_core::attacks::AttackReport;
use selcrypt_core::dprm::SecretKey;
use selcrypt_core::permission::{size_bits, Permission};

pub fn key_hex(k: &SecretKey) -> String {
    k.0.iter().map(|b| format!("{b:02x}")).collect()
}

/// Human-readable permission. Keys are redacted unless `show_keys`.
pub fn permission_json(p: &Permission, show_keys: bool, serialized_bytes: usize) -> Value {
    // The size formula takes one per-layer count; estimate it from the
    // released share, tiers being near equal in size.
    let phi = p.items.iter().flat_map(|it| it.cells.iter().map(Vec::len)).sum::<usize>();
    let items: Vec<Value> = p
        .items
        .iter()
        .enumerate()
        .map(|(m, it)| {
            json!({
                "tier": m + 1,
                "key": if show_keys { key_hex(&it.key) } else { "redacted".to_string() },
                "bounds": it.bounds.iter().map(|b| b.map(|b| json!([b.lower, b.upper]))).collect::<Vec<_>>(),
                "locations": it.cells.iter().map(Vec::len).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "level": p.level,
        "tiers": p.tiers,
        "layers": p.layer_count(),
        "mu": p.stats.mu,
        "sigma": p.stats.sigma,
        "rho": p.rho,
        "items": items,
        "serialized_bytes": serialized_bytes,
        "nominal_bits": size_bits(p.level, p.tiers, p.layer_count(), phi * p.tiers / p.level.max(1) / p.layer_count().max(1), 256),
    })
}

pub fn attack_json(r: &AttackReport, extra: Value) -> Value {
    let mut v = json!({
        "attack": r.attack,
        "attacked": r.attacked,
        "baseline": r.baseline,
        "goal": r.goal,
        "success": r.success,
    });
    if let (Some(obj), Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

pub fn report_json(r: &ImperceptibilityReport) -> Value {
    json!({
        "layers": r.layers.iter().map(|l| json!({
            "layer": l.layer,
            "ks_statistic": l.statistic,
            "p_value": l.p_value,
            "n_cipher": l.n_cipher,
            "n_plain": l.n_plain,
        })).collect::<Vec<_>>(),
        "skipped_layers": r.skipped,
        "mutual_information": r.mutual_information,
        "noise_entropy": r.noise_entropy,
        "equivocation": r.equivocation,
        "indistinguishable": r.indistinguishable,
    })
}
