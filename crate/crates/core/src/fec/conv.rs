use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero bits appended to flush the encoder back to state 0.
pub const TAIL_BITS: usize = 6;

const MEMORY: usize = TAIL_BITS;
const STATES: usize = 1 << MEMORY;
/// Input magnitude clamp; keeps path metrics finite for saturated inputs.
const LLR_CLAMP: f64 = 1e6;

/// Feed-forward rate-1/2 convolutional code with constraint length 7.
///
/// Generators are 7-bit octal masks whose most significant bit taps the
/// current input; the encoder state holds the previous six inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvCodeSpec {
    pub generators: [u32; 2],
}

impl Default for ConvCodeSpec {
    fn default() -> Self {
        ConvCodeSpec { generators: [0o171, 0o133] }
    }
}

impl ConvCodeSpec {
    pub fn num_states(&self) -> usize {
        STATES
    }

    /// Output pair of the register `(input << 6) | state`.
    fn output(&self, reg: usize) -> [u8; 2] {
        let g = self.generators;
        [
            ((reg as u32 & g[0]).count_ones() & 1) as u8,
            ((reg as u32 & g[1]).count_ones() & 1) as u8,
        ]
    }

    fn output_table(&self) -> [[u8; 2]; 2 * STATES] {
        let mut table = [[0; 2]; 2 * STATES];
        for (reg, out) in table.iter_mut().enumerate() {
            *out = self.output(reg);
        }
        table
    }

    pub fn coded_len(&self, info_len: usize) -> usize {
        2 * (info_len + TAIL_BITS)
    }

    /// Encodes and terminates with [`TAIL_BITS`] zeros.
    pub fn encode(&self, info_bits: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.coded_len(info_bits.len()));
        let mut state = 0usize;
        for &b in info_bits.iter().chain(std::iter::repeat_n(&0u8, TAIL_BITS)) {
            let reg = (usize::from(b & 1) << MEMORY) | state;
            out.extend_from_slice(&self.output(reg));
            state = reg >> 1;
        }
        out
    }

    /// Maximum-likelihood decoding of a terminated codeword from soft inputs.
    ///
    /// Maximizes the correlation `sum_k (1 - 2 c_k) llr_k` over all codewords.
    pub fn soft_decode(&self, llrs: &[f64]) -> Result<Vec<u8>> {
        if llrs.len() % 2 != 0 || llrs.len() < 2 * TAIL_BITS {
            return Err(Error::input(format!(
                "soft input length {} is not a terminated rate-1/2 codeword",
                llrs.len()
            )));
        }
        if llrs.iter().any(|v| v.is_nan()) {
            return Err(Error::input("soft input contains NaN"));
        }
        let steps = llrs.len() / 2;
        let table = self.output_table();
        let mut metric = [f64::NEG_INFINITY; STATES];
        metric[0] = 0.0;
        let mut next = [f64::NEG_INFINITY; STATES];
        // bit `ns` of decisions[k] selects the predecessor's low bit
        let mut decisions = vec![0u64; steps];

        for (k, pair) in llrs.chunks_exact(2).enumerate() {
            let l0 = pair[0].clamp(-LLR_CLAMP, LLR_CLAMP);
            let l1 = pair[1].clamp(-LLR_CLAMP, LLR_CLAMP);
            let branch = |out: [u8; 2]| {
                (if out[0] == 0 { l0 } else { -l0 }) + (if out[1] == 0 { l1 } else { -l1 })
            };
            let mut dec = 0u64;
            for (ns, slot) in next.iter_mut().enumerate() {
                let u = ns >> (MEMORY - 1);
                let base = (ns << 1) & (STATES - 1);
                let s0 = base;
                let s1 = base | 1;
                let m0 = metric[s0] + branch(table[(u << MEMORY) | s0]);
                let m1 = metric[s1] + branch(table[(u << MEMORY) | s1]);
                if m1 > m0 {
                    *slot = m1;
                    dec |= 1 << ns;
                } else {
                    *slot = m0;
                }
            }
            decisions[k] = dec;
            std::mem::swap(&mut metric, &mut next);
        }

        let mut state = 0usize;
        let mut bits = vec![0u8; steps];
        for k in (0..steps).rev() {
            bits[k] = (state >> (MEMORY - 1)) as u8;
            let low = ((decisions[k] >> state) & 1) as usize;
            state = ((state << 1) & (STATES - 1)) | low;
        }
        bits.truncate(steps - TAIL_BITS);
        Ok(bits)
    }

    /// Minimum output weight of any path that leaves state 0 and first returns
    /// to it within `max_depth` steps.
    pub fn free_distance(&self, max_depth: usize) -> Option<u32> {
        let table = self.output_table();
        let weight = |reg: usize| table[reg].iter().map(|&b| u32::from(b)).sum::<u32>();
        let mut best: Option<u32> = None;
        let mut dist = vec![u32::MAX; STATES];
        // forced divergence: input 1 from state 0
        let first = 1 << MEMORY;
        dist[first >> 1] = weight(first);
        for _ in 1..max_depth {
            let mut nd = vec![u32::MAX; STATES];
            for s in 1..STATES {
                if dist[s] == u32::MAX {
                    continue;
                }
                for u in 0..2 {
                    let reg = (u << MEMORY) | s;
                    let w = dist[s] + weight(reg);
                    let ns = reg >> 1;
                    if ns == 0 {
                        best = Some(best.map_or(w, |b: u32| b.min(w)));
                    } else if w < nd[ns] {
                        nd[ns] = w;
                    }
                }
            }
            dist = nd;
        }
        best
    }

    /// True when some nonzero state cycle emits only zeros, i.e. a finite
    /// number of channel errors could cause unbounded decoding errors.
    pub fn is_catastrophic(&self) -> bool {
        let table = self.output_table();
        // zero-output edges among nonzero states
        let succ = |s: usize| {
            (0..2).filter_map(move |u| {
                let reg = (u << MEMORY) | s;
                let ns = reg >> 1;
                (ns != 0 && table[reg] == [0, 0]).then_some(ns)
            })
        };
        // iterative DFS cycle detection with colors
        let mut color = [0u8; STATES];
        for root in 1..STATES {
            if color[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, succ(root).collect::<Vec<_>>())];
            color[root] = 1;
            while let Some((node, children)) = stack.last_mut() {
                if let Some(c) = children.pop() {
                    match color[c] {
                        1 => return true,
                        0 => {
                            color[c] = 1;
                            let kids = succ(c).collect();
                            stack.push((c, kids));
                        }
                        _ => {}
                    }
                } else {
                    color[*node] = 2;
                    stack.pop();
                }
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saturate(bits: &[u8]) -> Vec<f64> {
        bits.iter().map(|&b| if b == 0 { 1e9 } else { -1e9 }).collect()
    }

    #[test]
    fn zero_in_zero_out() {
        let code = ConvCodeSpec::default();
        let out = code.encode(&[0; 10]);
        assert_eq!(out.len(), 2 * (10 + TAIL_BITS));
        assert!(out.iter().all(|&b| b == 0));
    }

    #[test]
    fn impulse_response_interlaces_generators() {
        // 171 = 1111001b, 133 = 1011011b, read from the current-input tap down
        let g171 = [1, 1, 1, 1, 0, 0, 1];
        let g133 = [1, 0, 1, 1, 0, 1, 1];
        let out = ConvCodeSpec::default().encode(&[1, 0, 0, 0, 0, 0, 0]);
        let expect: Vec<u8> = (0..7).flat_map(|k| [g171[k], g133[k]]).collect();
        assert_eq!(&out[..14], &expect[..]);
        assert!(out[14..].iter().all(|&b| b == 0));
    }

    #[test]
    fn decodes_clean_codeword() {
        let code = ConvCodeSpec::default();
        let info = vec![1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1, 0];
        let decoded = code.soft_decode(&saturate(&code.encode(&info))).unwrap();
        assert_eq!(decoded, info);
        let inf: Vec<f64> = code
            .encode(&info)
            .iter()
            .map(|&b| if b == 0 { f64::INFINITY } else { f64::NEG_INFINITY })
            .collect();
        assert_eq!(code.soft_decode(&inf).unwrap(), info);
    }

    #[test]
    fn free_distance_is_ten_and_code_is_not_catastrophic() {
        let code = ConvCodeSpec::default();
        assert_eq!(code.free_distance(40), Some(10));
        assert!(!code.is_catastrophic());
        // x + x^2 style pair (3, 5 octal, shifted into 7 bits) is non-catastrophic,
        // while generators sharing the factor (1 + D) are
        let bad = ConvCodeSpec { generators: [0b1100000, 0b1010000] };
        assert!(bad.is_catastrophic());
    }

    #[test]
    fn corrects_two_hard_flips() {
        let code = ConvCodeSpec::default();
        let info: Vec<u8> = (0..40).map(|i| ((i * 7 + 3) % 5 < 2) as u8).collect();
        let cw = code.encode(&info);
        for a in 0..cw.len() {
            for b in (a + 1..cw.len()).step_by(7) {
                let mut llr = saturate(&cw).iter().map(|v| v.signum()).collect::<Vec<_>>();
                llr[a] = -llr[a];
                llr[b] = -llr[b];
                assert_eq!(code.soft_decode(&llr).unwrap(), info, "flips at {a},{b}");
            }
        }
    }

    #[test]
    fn length_errors() {
        let code = ConvCodeSpec::default();
        assert!(matches!(code.soft_decode(&[1.0; 13]), Err(Error::InvalidInput(_))));
        assert!(code.soft_decode(&[1.0; 10]).is_err());
        assert_eq!(code.soft_decode(&[1.0; 12]).unwrap(), Vec::<u8>::new());
    }
}
