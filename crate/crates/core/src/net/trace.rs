use serde::Serialize;

use super::config::NetConfig;
use super::plan::{plan, Activation, LayerSpec};
use super::SPATIAL_MULTIPLE;
use crate::error::{Error, Result};

/// Output shape of one layer for a single input image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceRow {
    pub layer: String,
    pub op: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Shape of the skip tensor merged at this layer, if any.
    pub skip: Option<(usize, usize, usize)>,
}

fn op_label(kernel: usize, cout: usize, act: Activation) -> String {
    let act = match act {
        Activation::Relu => "+relu",
        Activation::Sigmoid => "+sigmoid",
        Activation::Identity => "",
    };
    format!("conv{kernel}x{kernel}x{cout}{act}")
}

/// Lists every layer's output shape for an `h × w` input, verifying that each
/// skip merge sees matching spatial sizes.
pub fn spatial_trace(config: &NetConfig, h: usize, w: usize) -> Result<Vec<TraceRow>> {
    if h == 0
        || w == 0
        || !h.is_multiple_of(SPATIAL_MULTIPLE)
        || !w.is_multiple_of(SPATIAL_MULTIPLE)
    {
        return Err(Error::Invalid(format!(
            "trace size {h}x{w}: height and width must be positive multiples of {SPATIAL_MULTIPLE}"
        )));
    }
    config.validate()?;
    let plan = plan(config);
    let mut rows = Vec::new();
    for path in plan.paths() {
        let (mut c, mut y, mut x) = (3usize, h, w);
        let mut taps: Vec<(usize, (usize, usize, usize))> = Vec::new();
        for layer in &path.layers {
            let mut skip = None;
            let op = match layer {
                LayerSpec::Conv(s) => {
                    c = s.cout;
                    op_label(s.kernel, s.cout, s.activation)
                }
                LayerSpec::Deconv(s) => {
                    c = s.cout;
                    y *= 2;
                    x *= 2;
                    format!("deconv2x2x{}", s.cout)
                }
                LayerSpec::MaxPool { .. } => {
                    y /= 2;
                    x /= 2;
                    "maxpool2x2".into()
                }
                LayerSpec::Upsample { .. } => {
                    y *= 2;
                    x *= 2;
                    "upsample2x2".into()
                }
                LayerSpec::Tap { slot, .. } => {
                    taps.push((*slot, (c, y, x)));
                    "skip-source".into()
                }
                LayerSpec::Concat { name, slot } | LayerSpec::AddSkip { name, slot, .. } => {
                    let &(_, s) = taps
                        .iter()
                        .find(|(t, _)| t == slot)
                        .ok_or_else(|| Error::Graph(format!("{name}: untapped skip")))?;
                    if (s.1, s.2) != (y, x) {
                        return Err(Error::shape(
                            name.clone(),
                            format!("skip at {y}x{x}"),
                            format!("{}x{}", s.1, s.2),
                        ));
                    }
                    skip = Some(s);
                    if matches!(layer, LayerSpec::Concat { .. }) {
                        c += s.0;
                        "concat".into()
                    } else {
                        "add".into()
                    }
                }
            };
            rows.push(TraceRow {
                layer: layer.name().to_string(),
                op,
                channels: c,
                height: y,
                width: x,
                skip,
            });
        }
    }
    if plan.fine.is_some() {
        rows.push(TraceRow {
            layer: "fuse.add".into(),
            op: "add".into(),
            channels: 1,
            height: h,
            width: w,
            skip: None,
        });
    }
    rows.push(TraceRow {
        layer: plan.fusion.name.clone(),
        op: op_label(1, 1, Activation::Sigmoid),
        channels: 1,
        height: h,
        width: w,
        skip: None,
    });
    Ok(rows)
}

/// Renders a trace as an aligned text table.
pub fn format_trace(rows: &[TraceRow]) -> String {
    let mut out = format!(
        "{:<16} {:<22} {:>8} {:>11} {}\n",
        "layer", "op", "channels", "spatial", "skip"
    );
    for r in rows {
        let skip = r
            .skip
            .map(|(c, h, w)| format!("{c}@{h}x{w}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:<16} {:<22} {:>8} {:>11} {}\n",
            r.layer,
            r.op,
            r.channels,
            format!("{}x{}", r.height, r.width),
            skip
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bottleneck(h: usize) -> (usize, usize) {
        let rows = spatial_trace(&NetConfig::default(), h, h).unwrap();
        let r = rows.iter().find(|r| r.layer == "p1.b5.conv3").unwrap();
        (r.height, r.width)
    }

    #[test]
    fn bottleneck_sizes() {
        assert_eq!(bottleneck(256), (16, 16));
        assert_eq!(bottleneck(32), (2, 2));
    }

    #[test]
    fn skip_resolutions() {
        let rows = spatial_trace(&NetConfig::default(), 256, 256).unwrap();
        let skip = |name: &str| rows.iter().find(|r| r.layer == name).unwrap().skip.unwrap();
        assert_eq!(skip("p1.b6.concat"), (512, 32, 32));
        assert_eq!(skip("p1.b7.concat"), (256, 64, 64));
        assert_eq!(skip("p2.b4.concat"), (128, 128, 128));
        assert_eq!(skip("p2.b5.concat"), (64, 256, 256));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(spatial_trace(&NetConfig::default(), 40, 32).is_err());
    }

    #[test]
    fn table_renders() {
        let rows = spatial_trace(&NetConfig::default(), 32, 32).unwrap();
        let t = format_trace(&rows);
        assert!(t.contains("p1.b6.concat"));
        assert_eq!(t.lines().count(), rows.len() + 1);
    }
}
