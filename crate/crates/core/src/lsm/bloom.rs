/// Fixed-size Bloom filter over `u64` source ids, ~10 bits per key, 4 probes.
#[derive(Debug, Clone)]
pub struct Bloom {
    bits: Vec<u64>,
    mask: u64,
}

const PROBES: u32 = 4;

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Bloom {
    pub fn with_capacity(keys: usize) -> Self {
        let nbits = (keys.max(1) * 10).next_power_of_two().max(64);
        Bloom {
            bits: vec![0; nbits / 64],
            mask: nbits as u64 - 1,
        }
    }

    fn probes(&self, key: u64) -> impl Iterator<Item = u64> + '_ {
        let h = mix(key);
        let (h1, h2) = (h, (h >> 32) | 1);
        (0..PROBES as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) & self.mask)
    }

    pub fn insert(&mut self, key: u64) {
        let idx: Vec<u64> = self.probes(key).collect();
        for b in idx {
            self.bits[(b / 64) as usize] |= 1 << (b % 64);
        }
    }

    pub fn contains(&self, key: u64) -> bool {
        self.probes(key)
            .all(|b| self.bits[(b / 64) as usize] & (1 << (b % 64)) != 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives() {
        let mut b = Bloom::with_capacity(1000);
        for k in (0..1000u64).map(|i| i * 7919) {
            b.insert(k);
        }
        assert!((0..1000u64).all(|i| b.contains(i * 7919)));
        let fp = (1_000_000..1_010_000u64).filter(|&k| b.contains(k)).count();
        assert!(fp < 500, "false positive count {fp}");
    }
}
