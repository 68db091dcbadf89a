use selcrypt_core::{Dataset, Target, Tensor};

use super::{FormatError, Reader, Result, Writer};

const MAGIC: &str = "SDAT";
const CLASS: u8 = 0;
const TENSOR: u8 = 1;

/// `SDAT`: count, shared input shape, target kind, then all inputs and all
/// targets. Tensor targets carry their shared shape after the kind byte.
pub fn write_dataset(data: &Dataset) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u32(data.len());
    w.shape(data.inputs[0].shape());
    match &data.targets[0] {
        Target::Class(_) => w.u8(CLASS),
        Target::Values(t) => {
            w.u8(TENSOR);
            w.shape(t.shape());
        }
    }
    data.inputs.iter().for_each(|x| w.f64s(x.data()));
    for t in &data.targets {
        match t {
            Target::Class(c) => w.u32(*c),
            Target::Values(v) => w.f64s(v.data()),
        }
    }
    w.buf
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let n = r.u32("sample count")? as usize;
    if n == 0 {
        return Err(r.invalid("sample count", "dataset is empty"));
    }
    let in_shape = r.shape("input shape")?;
    let kind = r.u8("target kind")?;
    let t_shape = match kind {
        CLASS => None,
        TENSOR => Some(r.shape("target shape")?),
        k => return Err(r.invalid("target kind", format!("unknown kind {k}"))),
    };
    let per: usize = in_shape.iter().product();
    let mut inputs = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.offset();
        let x = r.f64s(per, "inputs")?;
        inputs.push(tensor(&in_shape, x, at, i)?);
    }
    let mut targets = Vec::with_capacity(n);
    for i in 0..n {
        let at = r.offset();
        targets.push(match &t_shape {
            None => Target::Class(r.u32("class targets")? as usize),
            Some(s) => Target::Values(tensor(s, r.f64s(s.iter().product(), "tensor targets")?, at, i)?),
        });
    }
    r.finish()?;
    Dataset::new(inputs, targets).map_err(|e| FormatError::Invalid { offset: 0, what: "dataset".into(), detail: e.to_string() })
}

fn tensor(shape: &[usize], data: Vec<f64>, offset: usize, sample: usize) -> Result<Tensor> {
    Tensor::new(shape, data).map_err(|e| FormatError::Invalid { offset, what: format!("sample {sample}"), detail: e.to_string() })
}
