//! Compact layer-string DSL for spiking classifiers.
//!
//! ```text
//! spec  := seq
//! seq   := item ('-' item)*
//! item  := '{' seq '}' '*' N | token
//! token := 'c'X'k'Y's'Z | 'MPk'Y's'Z | 'APk'Y's'Z | 'BN' | 'ALIF' | 'LIF' | 'DP' | 'FC'N
//! ```
//!
//! `cXkYsZ` is a convolution with X output channels, kernel Y and stride Z;
//! `MP`/`AP` are max / average pooling; `{...}*n` repeats a group. The last
//! token must be the `AP` voting head, which is kept apart from the body.
//! `LIF` is an ALIF layer whose `tau` and `v_th` are frozen.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv { out_channels: usize, kernel: usize, stride: usize },
    MaxPool { kernel: usize, stride: usize },
    AvgPool { kernel: usize, stride: usize },
    BatchNorm,
    Alif,
    Lif,
    Dropout,
    Fc(usize),
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerDesc::Conv { out_channels, kernel, stride } => write!(f, "c{out_channels}k{kernel}s{stride}"),
            LayerDesc::MaxPool { kernel, stride } => write!(f, "MPk{kernel}s{stride}"),
            LayerDesc::AvgPool { kernel, stride } => write!(f, "APk{kernel}s{stride}"),
            LayerDesc::BatchNorm => f.write_str("BN"),
            LayerDesc::Alif => f.write_str("ALIF"),
            LayerDesc::Lif => f.write_str("LIF"),
            LayerDesc::Dropout => f.write_str("DP"),
            LayerDesc::Fc(n) => write!(f, "FC{n}"),
        }
    }
}

/// Parsed architecture: the expanded body plus the voting head.
#[derive(Debug, Clone)]
pub struct ArchitectureSpec {
    pub layers: Vec<LayerDesc>,
    /// Trailing average pool that groups output neurons into class votes.
    pub head: (usize, usize),
    /// Source offset of each body layer's token, for error reporting.
    offsets: Vec<usize>,
    head_offset: usize,
}

impl PartialEq for ArchitectureSpec {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.head == other.head
    }
}

/// One row of the expanded layer table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub layer: LayerDesc,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

impl ArchitectureSpec {
    /// Flat rendering; parses back to an equal spec.
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = self.layers.iter().map(|l| l.to_string()).collect();
        parts.push(LayerDesc::AvgPool { kernel: self.head.0, stride: self.head.1 }.to_string());
        parts.join("-")
    }

    /// Propagate a `[C, H, W]` input shape through every layer.
    pub fn shapes(&self, input: &[usize]) -> Result<(Vec<LayerShape>, usize)> {
        let mut cur = input.to_vec();
        let mut rows = Vec::with_capacity(self.layers.len());
        for (layer, &offset) in self.layers.iter().zip(&self.offsets) {
            let out = layer_output(layer, &cur).map_err(|reason| Error::Arch { offset, reason })?;
            rows.push(LayerShape {
                layer: *layer,
                input: cur,
                output: out.clone(),
            });
            cur = out;
        }
        let (k, s) = self.head;
        let classes = match cur.as_slice() {
            [f] if *f >= k && (f - k) % s == 0 => (f - k) / s + 1,
            _ => {
                return Err(Error::Arch {
                    offset: self.head_offset,
                    reason: format!("voting head APk{k}s{s} needs a flat input it tiles, got {cur:?}"),
                })
            }
        };
        Ok((rows, classes))
    }

    /// Human-readable expanded layer table.
    pub fn table(&self, input: &[usize]) -> Result<String> {
        let (rows, classes) = self.shapes(input)?;
        let mut out = format!("{:>4}  {:<10} {:<16} {}\n", "#", "layer", "input", "output");
        for (i, r) in rows.iter().enumerate() {
            out += &format!("{:>4}  {:<10} {:<16} {}\n", i, r.layer.to_string(), fmt_shape(&r.input), fmt_shape(&r.output));
        }
        let last = rows.last().map(|r| r.output.clone()).unwrap_or_else(|| input.to_vec());
        let head = LayerDesc::AvgPool { kernel: self.head.0, stride: self.head.1 };
        out += &format!("{:>4}  {:<10} {:<16} {}\n", "head", head.to_string(), fmt_shape(&last), fmt_shape(&[classes]));
        Ok(out)
    }
}

fn fmt_shape(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn layer_output(layer: &LayerDesc, inp: &[usize]) -> std::result::Result<Vec<usize>, String> {
    match *layer {
        LayerDesc::Conv { out_channels, kernel, stride } => match inp {
            [_, h, w] => {
                if kernel % 2 == 0 {
                    return Err(format!("same padding needs an odd kernel, got {kernel}"));
                }
                let pad = (kernel - 1) / 2;
                let dim = |n: usize| (n + 2 * pad - kernel) / stride + 1;
                Ok(vec![out_channels, dim(*h), dim(*w)])
            }
            _ => Err(format!("convolution needs [C, H, W] input, got {inp:?}")),
        },
        LayerDesc::MaxPool { kernel, stride } | LayerDesc::AvgPool { kernel, stride } => {
            let tiles = |n: usize| n >= kernel && (n - kernel).is_multiple_of(stride);
            match inp {
                [c, h, w] if tiles(*h) && tiles(*w) => Ok(vec![*c, (h - kernel) / stride + 1, (w - kernel) / stride + 1]),
                [f] if tiles(*f) => Ok(vec![(f - kernel) / stride + 1]),
                _ => Err(format!("pooling k{kernel}s{stride} does not tile {inp:?}")),
            }
        }
        LayerDesc::Fc(n) => Ok(vec![n]),
        LayerDesc::BatchNorm | LayerDesc::Alif | LayerDesc::Lif | LayerDesc::Dropout => Ok(inp.to_vec()),
    }
}

/// Parse and expand an architecture string.
pub fn parse_arch(text: &str) -> Result<ArchitectureSpec> {
    let chars: Vec<char> = text.chars().collect();
    let mut p = Parser { chars: &chars, pos: 0 };
    let mut items = p.seq()?;
    if p.pos != chars.len() {
        return Err(p.err(format!("unexpected '{}'", chars[p.pos])));
    }
    let (head, head_offset) = match items.pop() {
        Some((LayerDesc::AvgPool { kernel, stride }, off)) => ((kernel, stride), off),
        Some((_, off)) => {
            return Err(Error::Arch {
                offset: off,
                reason: "architecture must end with an APkYsZ voting head".into(),
            })
        }
        None => return Err(p.err("empty architecture".into())),
    };
    if let Some((_, off)) = items.iter().find(|(l, _)| matches!(l, LayerDesc::AvgPool { .. })) {
        return Err(Error::Arch {
            offset: *off,
            reason: "average pooling is only allowed as the final voting head".into(),
        });
    }
    let (layers, offsets) = items.into_iter().unzip();
    Ok(ArchitectureSpec {
        layers,
        head,
        offsets,
        head_offset,
    })
}

struct Parser<'a> {
    chars: &'a [char],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, reason: String) -> Error {
        Error::Arch { offset: self.pos, reason }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn seq(&mut self) -> Result<Vec<(LayerDesc, usize)>> {
        let mut out = self.item()?;
        while self.peek() == Some('-') {
            self.pos += 1;
            out.extend(self.item()?);
        }
        Ok(out)
    }

    fn item(&mut self) -> Result<Vec<(LayerDesc, usize)>> {
        if self.peek() == Some('{') {
            let open = self.pos;
            self.pos += 1;
            let body = self.seq()?;
            if self.peek() != Some('}') {
                return Err(self.err(format!("unclosed group opened at {open}")));
            }
            self.pos += 1;
            if self.peek() != Some('*') {
                return Err(self.err("group must be followed by '*n'".into()));
            }
            self.pos += 1;
            let n = self.number()?;
            Ok((0..n).flat_map(|_| body.iter().copied()).collect())
        } else {
            Ok(vec![self.token()?])
        }
    }

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a number".into()));
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Arch {
                offset: start,
                reason: format!("'{s}' is not a positive integer"),
            }),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn eat(&mut self, word: &str) -> bool {
        let n = word.len();
        if self.chars.len() >= self.pos + n && self.chars[self.pos..self.pos + n].iter().copied().eq(word.chars()) {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn kernel_stride(&mut self) -> Result<(usize, usize)> {
        self.expect('k')?;
        let k = self.number()?;
        self.expect('s')?;
        let s = self.number()?;
        Ok((k, s))
    }

    fn token(&mut self) -> Result<(LayerDesc, usize)> {
        let start = self.pos;
        let desc = if self.eat("MP") {
            let (kernel, stride) = self.kernel_stride()?;
            LayerDesc::MaxPool { kernel, stride }
        } else if self.eat("AP") {
            let (kernel, stride) = self.kernel_stride()?;
            LayerDesc::AvgPool { kernel, stride }
        } else if self.eat("FC") {
            LayerDesc::Fc(self.number()?)
        } else if self.eat("BN") {
            LayerDesc::BatchNorm
        } else if self.eat("ALIF") {
            LayerDesc::Alif
        } else if self.eat("LIF") {
            LayerDesc::Lif
        } else if self.eat("DP") {
            LayerDesc::Dropout
        } else if self.peek() == Some('c') {
            self.pos += 1;
            let out_channels = self.number()?;
            let (kernel, stride) = self.kernel_stride()?;
            LayerDesc::Conv { out_channels, kernel, stride }
        } else {
            let end = (self.pos..self.chars.len())
                .find(|&i| matches!(self.chars[i], '-' | '{' | '}' | '*'))
                .unwrap_or(self.chars.len());
            let word: String = self.chars[self.pos..end].iter().collect();
            return Err(self.err(if word.is_empty() { "expected a layer token".into() } else { format!("unknown token '{word}'") }));
        };
        if self.peek().is_some_and(|c| c.is_ascii_alphanumeric()) {
            return Err(Error::Arch {
                offset: start,
                reason: format!("trailing characters after '{desc}'"),
            });
        }
        Ok((desc, start))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MNIST: &str = "{c128k3s1-BN-ALIF-MPk2s2}*2-DP-FC2048-ALIF-DP-FC100-ALIF-APk10s10";
    const CIFAR: &str = "{{c256k3s1-BN-ALIF}*3-MPk2s2}*2-DP-FC2048-ALIF-DP-FC100-ALIF-APk10s10";

    #[test]
    fn single_conv_token() {
        let a = parse_arch("c128k3s1-FC10-APk1s1").unwrap();
        assert_eq!(a.layers[0], LayerDesc::Conv { out_channels: 128, kernel: 3, stride: 1 });
    }

    #[test]
    fn mnist_string_expands_to_fourteen() {
        let a = parse_arch(MNIST).unwrap();
        assert_eq!(a.layers.len(), 14);
        assert_eq!(a.head, (10, 10));
        let (rows, classes) = a.shapes(&[1, 28, 28]).unwrap();
        assert_eq!(classes, 10);
        assert_eq!(rows[3].output, vec![128, 14, 14]);
        assert_eq!(rows[7].output, vec![128, 7, 7]);
        assert_eq!(rows[9].input, vec![128, 7, 7]);
        assert_eq!(rows[9].output, vec![2048]);
    }

    #[test]
    fn cifar_nested_groups() {
        let a = parse_arch(CIFAR).unwrap();
        assert_eq!(a.layers.len(), 2 * (3 * 3 + 1) + 6);
        let (rows, classes) = a.shapes(&[3, 32, 32]).unwrap();
        assert_eq!(classes, 10);
        assert_eq!(rows[19].output, vec![256, 8, 8]);
    }

    #[test]
    fn round_trip_and_repeat_identity() {
        for s in [MNIST, CIFAR] {
            let a = parse_arch(s).unwrap();
            assert_eq!(parse_arch(&a.render()).unwrap(), a);
        }
        assert_eq!(parse_arch("{c8k3s1-BN}*1-FC10-APk1s1").unwrap(), parse_arch("c8k3s1-BN-FC10-APk1s1").unwrap());
    }

    fn offset_of(e: Error) -> usize {
        match e {
            Error::Arch { offset, .. } => offset,
            other => panic!("expected arch error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_positions() {
        assert_eq!(offset_of(parse_arch("c8k3s1-XYZ-APk1s1").unwrap_err()), 7);
        assert_eq!(offset_of(parse_arch("{c8k3s1-BN-APk1s1").unwrap_err()), 17);
        assert_eq!(offset_of(parse_arch("{c8k3s1}*0-APk1s1").unwrap_err()), 9);
        assert_eq!(offset_of(parse_arch("c8k3s1-BN").unwrap_err()), 7);
        assert_eq!(offset_of(parse_arch("BNX-APk1s1").unwrap_err()), 0);
        assert_eq!(offset_of(parse_arch("c8k3s1-APk2s2-FC10-APk1s1").unwrap_err()), 7);
        // shape errors point at the offending token
        let a = parse_arch("c8k3s1-MPk2s2-MPk2s2-FC10-APk1s1").unwrap();
        assert_eq!(offset_of(a.shapes(&[1, 6, 6]).unwrap_err()), 14);
        let a = parse_arch("FC95-APk10s10").unwrap();
        assert_eq!(offset_of(a.shapes(&[1, 4, 4]).unwrap_err()), 5);
    }

    #[test]
    fn table_lists_every_layer() {
        let a = parse_arch(MNIST).unwrap();
        let t = a.table(&[1, 28, 28]).unwrap();
        assert_eq!(t.lines().count(), 1 + 14 + 1);
        assert!(t.contains("APk10s10"));
    }
}
