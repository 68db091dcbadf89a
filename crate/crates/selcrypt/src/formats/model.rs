use selcrypt_core::{Layer, LayerKind, Model, Task, Tensor};

use super::{FormatError, Reader, Result, Writer};

const MAGIC: &str = "SENC";

fn kind_code(k: LayerKind) -> u8 {
    match k {
        LayerKind::Conv2d => 0,
        LayerKind::Dense => 1,
        LayerKind::Relu => 2,
        LayerKind::Flatten => 3,
        LayerKind::Softmax => 4,
    }
}

/// `SENC`: task, layers (kind, weight shape, stride, padding, weights,
/// biases), then the considered-layer list. Plain and protected models are
/// indistinguishable in this format.
pub fn write_model(model: &Model) -> Vec<u8> {
    let mut w = Writer::new(MAGIC);
    w.u8(match model.task {
        Task::Classification => 0,
        Task::Regression => 1,
    });
    w.u16(model.layers.len());
    for layer in &model.layers {
        w.u8(kind_code(layer.kind));
        w.shape(layer.weight.shape());
        w.u32(layer.stride);
        w.u32(layer.padding);
        w.f64s(layer.weight.data());
        w.f64s(layer.bias.data());
    }
    w.u16(model.considered().len());
    model.considered().iter().for_each(|&l| w.u16(l));
    w.buf
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader::open(bytes, MAGIC)?;
    let task = match r.u8("task")? {
        0 => Task::Classification,
        1 => Task::Regression,
        t => return Err(r.invalid("task", format!("unknown task {t}"))),
    };
    let count = r.u16("layer count")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let at = r.offset();
        let what = format!("layer {i}");
        let kind = r.u8(&what)?;
        let shape = r.shape(&what)?;
        let stride = r.u32(&what)? as usize;
        let padding = r.u32(&what)? as usize;
        let bad = |detail: String| FormatError::Invalid { offset: at, what: what.clone(), detail };
        let layer = match kind {
            0 | 1 => {
                let n: usize = shape.iter().product();
                let weight = r.f64s(n, &what)?;
                let bias = r.f64s(shape[0], &what)?;
                let weight = Tensor::new(&shape, weight).map_err(|e| bad(e.to_string()))?;
                let bias = Tensor::new(&[shape[0]], bias).map_err(|e| bad(e.to_string()))?;
                if kind == 0 {
                    Layer::conv2d(weight, bias, stride, padding)
                } else {
                    Layer::dense(weight, bias)
                }
                .map_err(|e| bad(e.to_string()))?
            }
            2..=4 if shape.is_empty() => match kind {
                2 => Layer::relu(),
                3 => Layer::flatten(),
                _ => Layer::softmax(),
            },
            2..=4 => return Err(bad(format!("parameter-free layer with weight shape {shape:?}"))),
            k => return Err(bad(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    let n = r.u16("considered layers")? as usize;
    let at = r.offset();
    let considered = (0..n).map(|_| r.u16("considered layers").map(usize::from)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Model::new(layers, considered, task).map_err(|e| FormatError::Invalid { offset: at, what: "considered layers".into(), detail: e.to_string() })
}
