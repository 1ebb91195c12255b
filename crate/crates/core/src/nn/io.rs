//! Versioned text checkpoints. Values are written with 17 significant
//! digits, which round-trips f64 exactly.

use super::{Layer, Network, NnError, Tensor};
use std::io::{BufRead, Write};

pub const NET_MAGIC: &str = "aniscert-net";
pub const NET_VERSION: &str = "v1";

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    write!(w, "tensor {}", t.shape.len())?;
    for d in &t.shape {
        write!(w, " {d}")?;
    }
    writeln!(w)?;
    for (i, v) in t.data.iter().enumerate() {
        if i > 0 {
            write!(w, "{}", if i % 8 == 0 { "\n" } else { " " })?;
        }
        write!(w, "{v:.16e}")?;
    }
    writeln!(w)?;
    Ok(())
}

pub fn save_network<W: Write>(net: &Network, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "{NET_MAGIC} {NET_VERSION}")?;
    writeln!(w, "layers {}", net.layers.len())?;
    for layer in &net.layers {
        match layer {
            Layer::Dense { weight, .. } => {
                writeln!(w, "dense {} {}", weight.shape[1], weight.shape[0])?
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => writeln!(w, "conv2d {in_channels} {out_channels} {kernel}")?,
            Layer::LeakyRelu { slope } => writeln!(w, "leaky_relu {slope:.16e}")?,
            Layer::Tanh => writeln!(w, "tanh")?,
            Layer::AmplifiedTanh { gamma } => writeln!(w, "amplified_tanh {gamma:.16e}")?,
            Layer::Softmax => writeln!(w, "softmax")?,
            Layer::SkipConcat => writeln!(w, "skip_concat")?,
        }
    }
    for layer in &net.layers {
        match layer {
            Layer::Dense { weight, bias } | Layer::Conv2d { weight, bias, .. } => {
                write_tensor(w, weight)?;
                write_tensor(w, bias)?;
            }
            _ => {}
        }
    }
    Ok(())
}

/// Whitespace token stream over a reader.
pub(crate) struct Tokens {
    buf: Vec<String>,
    pos: usize,
}

impl Tokens {
    pub(crate) fn from_reader<R: BufRead>(r: &mut R) -> Result<Self, NnError> {
        let mut s = String::new();
        r.read_to_string(&mut s)
            .map_err(|e| NnError::Io(e.to_string()))?;
        Ok(Self {
            buf: s.split_whitespace().map(str::to_owned).collect(),
            pos: 0,
        })
    }

    pub(crate) fn next(&mut self) -> Result<&str, NnError> {
        let t = self
            .buf
            .get(self.pos)
            .ok_or_else(|| NnError::Parse("unexpected end of checkpoint".into()))?;
        self.pos += 1;
        Ok(t)
    }

    pub(crate) fn next_usize(&mut self) -> Result<usize, NnError> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| NnError::Parse(format!("expected integer, got '{t}'")))
    }

    pub(crate) fn next_f64(&mut self) -> Result<f64, NnError> {
        let t = self.next()?;
        t.parse()
            .map_err(|_| NnError::Parse(format!("expected number, got '{t}'")))
    }

    pub(crate) fn expect(&mut self, want: &str) -> Result<(), NnError> {
        let t = self.next()?;
        if t != want {
            return Err(NnError::Parse(format!("expected '{want}', got '{t}'")));
        }
        Ok(())
    }
}

fn read_tensor(tok: &mut Tokens) -> Result<Tensor, NnError> {
    tok.expect("tensor")?;
    let rank = tok.next_usize()?;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(tok.next_usize()?);
    }
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(tok.next_f64()?);
    }
    Tensor::new(shape, data)
}

pub(crate) fn load_network_tokens(tok: &mut Tokens) -> Result<Network, NnError> {
    tok.expect(NET_MAGIC)?;
    tok.expect(NET_VERSION)?;
    tok.expect("layers")?;
    let k = tok.next_usize()?;
    let mut specs: Vec<(String, Vec<f64>)> = Vec::with_capacity(k);
    for _ in 0..k {
        let kind = tok.next()?.to_owned();
        let args = match kind.as_str() {
            "dense" => vec![tok.next_f64()?, tok.next_f64()?],
            "conv2d" => vec![tok.next_f64()?, tok.next_f64()?, tok.next_f64()?],
            "leaky_relu" | "amplified_tanh" => vec![tok.next_f64()?],
            "tanh" | "softmax" | "skip_concat" => vec![],
            other => return Err(NnError::Parse(format!("unknown layer kind '{other}'"))),
        };
        specs.push((kind, args));
    }
    let mut layers = Vec::with_capacity(k);
    for (kind, args) in specs {
        let layer = match kind.as_str() {
            "dense" => {
                let weight = read_tensor(tok)?.with_grad();
                let bias = read_tensor(tok)?.with_grad();
                let (inp, out) = (args[0] as usize, args[1] as usize);
                if weight.shape != vec![out, inp] || bias.shape != vec![out] {
                    return Err(NnError::Parse("dense tensor shape mismatch".into()));
                }
                Layer::Dense { weight, bias }
            }
            "conv2d" => {
                let (ic, oc, ks) = (args[0] as usize, args[1] as usize, args[2] as usize);
                let weight = read_tensor(tok)?.with_grad();
                let bias = read_tensor(tok)?.with_grad();
                if weight.shape != vec![oc, ic, ks, ks] || bias.shape != vec![oc] {
                    return Err(NnError::Parse("conv2d tensor shape mismatch".into()));
                }
                Layer::Conv2d {
                    weight,
                    bias,
                    in_channels: ic,
                    out_channels: oc,
                    kernel: ks,
                }
            }
            "leaky_relu" => Layer::LeakyRelu { slope: args[0] },
            "amplified_tanh" => Layer::AmplifiedTanh { gamma: args[0] },
            "tanh" => Layer::Tanh,
            "softmax" => Layer::Softmax,
            "skip_concat" => Layer::SkipConcat,
            _ => unreachable!(),
        };
        layers.push(layer);
    }
    Ok(Network::new(layers))
}

pub fn load_network<R: BufRead>(r: &mut R) -> Result<Network, NnError> {
    let mut tok = Tokens::from_reader(r)?;
    load_network_tokens(&mut tok)
}

pub fn save_network_to_path(net: &Network, path: &std::path::Path) -> Result<(), NnError> {
    let f = std::fs::File::create(path).map_err(|e| NnError::Io(e.to_string()))?;
    let mut w = std::io::BufWriter::new(f);
    save_network(net, &mut w).map_err(|e| NnError::Io(e.to_string()))
}

pub fn load_network_from_path(path: &std::path::Path) -> Result<Network, NnError> {
    let f = std::fs::File::open(path).map_err(|e| NnError::Io(e.to_string()))?;
    load_network(&mut std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn round_trip_preserves_forward_outputs() {
        let mut rng = rng_from_seed(77);
        let net = Network::new(vec![
            Layer::conv2d(1, 3, 3, &mut rng),
            Layer::LeakyRelu { slope: 0.01 },
            Layer::SkipConcat,
            Layer::conv2d(4, 1, 3, &mut rng),
            Layer::Tanh,
        ]);
        let mut buf = Vec::new();
        save_network(&net, &mut buf).unwrap();
        let loaded = load_network(&mut buf.as_slice()).unwrap();

        use rand::Rng as _;
        let x = Tensor::new(
            vec![2, 1, 4, 4],
            (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let a = net.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        for (u, v) in a.data.iter().zip(&b.data) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn reject_garbage() {
        let mut bad = "not-a-checkpoint v9".as_bytes();
        assert!(load_network(&mut bad).is_err());
        let mut truncated = format!("{NET_MAGIC} {NET_VERSION}\nlayers 1\ndense 3 2\n");
        truncated.push_str("tensor 2 2 3\n1.0 2.0");
        assert!(load_network(&mut truncated.as_bytes()).is_err());
    }
}
