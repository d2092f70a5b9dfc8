use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AugmentationSpec;
use crate::envmap::EnvironmentMap;
use crate::error::{Error, Result};
use crate::photometry::{cct, mean_rgb, total_luminance};

/// Luminance below this is treated as this value when taking logs.
const LUMINANCE_FLOOR: f64 = 1e-12;

/// One edited variant and its measured lighting properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: String,
    pub spec: AugmentationSpec,
    pub total_luminance: f64,
    pub cct_kelvin: f64,
    /// Measurements of the unedited source, for relative range filters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Measurement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin: Option<usize>,
    /// The entry's bin had fewer than the requested number of entries.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub under_filled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub total_luminance: f64,
    pub cct_kelvin: f64,
}

/// Total luminance and the CCT of the mean colour of a whole map.
pub fn measure_map(map: &EnvironmentMap) -> Result<Measurement> {
    Ok(Measurement {
        total_luminance: total_luminance(map)?,
        cct_kelvin: cct(mean_rgb(map, None)?)?.kelvin,
    })
}

impl ManifestEntry {
    pub fn measured(
        source: impl Into<String>,
        spec: AugmentationSpec,
        variant: &EnvironmentMap,
    ) -> Result<Self> {
        let m = measure_map(variant)?;
        Ok(Self {
            source: source.into(),
            spec,
            total_luminance: m.total_luminance,
            cct_kelvin: m.cct_kelvin,
            baseline: None,
            bin: None,
            under_filled: false,
        })
    }

    pub fn with_baseline(mut self, baseline: Measurement) -> Self {
        self.baseline = Some(baseline);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(|e| Error::Codec(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut entries = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Codec(e.to_string()))?);
        }
        Ok(Self { entries })
    }

    /// Entry count per bin id.
    pub fn bin_populations(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            if let Some(b) = e.bin {
                *out.entry(b).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Keeps variants whose measurements changed, relative to their baseline,
/// within the given fractional ranges. Entries without a baseline pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub intensity_change: Option<(f64, f64)>,
    pub temperature_change: Option<(f64, f64)>,
}

impl RangeFilter {
    pub fn accepts(&self, e: &ManifestEntry) -> bool {
        let Some(b) = e.baseline else { return true };
        let within = |range: Option<(f64, f64)>, value: f64, base: f64| match range {
            Some((lo, hi)) if base > 0.0 => {
                let change = value / base - 1.0;
                change >= lo && change <= hi
            }
            _ => true,
        };
        within(self.intensity_change, e.total_luminance, b.total_luminance)
            && within(self.temperature_change, e.cct_kelvin, b.cct_kelvin)
    }

    pub fn apply(&self, manifest: &DatasetManifest) -> DatasetManifest {
        DatasetManifest::new(
            manifest
                .entries
                .iter()
                .filter(|e| self.accepts(e))
                .cloned()
                .collect(),
        )
    }
}

/// Equal-width bins over `[lo, hi]`; values on the upper edge go in the last bin.
fn bin_index(v: f64, lo: f64, hi: f64, n: usize) -> usize {
    if hi <= lo {
        return 0;
    }
    (((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1)
}

/// Assigns each entry to an intensity × temperature bin (log-luminance and
/// Kelvin, equal width over the measured range) and keeps up to `per_bin`
/// entries per bin, chosen uniformly under `seed`. The bin id is
/// `intensity_bin * n_temperature_bins + temperature_bin`.
pub fn bin_and_sample(
    manifest: &DatasetManifest,
    n_intensity_bins: usize,
    n_temperature_bins: usize,
    per_bin: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    if manifest.is_empty() {
        return Err(Error::InvalidParameter("empty manifest".into()));
    }
    if n_intensity_bins == 0 || n_temperature_bins == 0 {
        return Err(Error::InvalidParameter("bin counts must be at least 1".into()));
    }
    let log_l: Vec<f64> = manifest
        .entries
        .iter()
        .map(|e| e.total_luminance.max(LUMINANCE_FLOOR).ln())
        .collect();
    let kelvin: Vec<f64> = manifest.entries.iter().map(|e| e.cct_kelvin).collect();
    let range = |v: &[f64]| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
    };
    let (l_lo, l_hi) = range(&log_l);
    let (k_lo, k_hi) = range(&kelvin);

    let n_bins = n_intensity_bins * n_temperature_bins;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_bins];
    for i in 0..manifest.len() {
        let bi = bin_index(log_l[i], l_lo, l_hi, n_intensity_bins);
        let bt = bin_index(kelvin[i], k_lo, k_hi, n_temperature_bins);
        members[bi * n_temperature_bins + bt].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (bin, idx) in members.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let under = idx.len() < per_bin;
        let chosen: &mut [usize] = if under {
            idx
        } else {
            idx.partial_shuffle(&mut rng, per_bin).0
        };
        chosen.sort_unstable();
        for &i in chosen.iter() {
            let mut e = manifest.entries[i].clone();
            e.bin = Some(bin);
            e.under_filled = under;
            out.push(e);
        }
    }
    Ok(DatasetManifest::new(out))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::augmentation::AugmentationKind;

    fn entry(l: f64, k: f64) -> ManifestEntry {
        ManifestEntry {
            source: format!("{l}-{k}.hdr"),
            spec: AugmentationSpec::new(AugmentationKind::Intensity, 1.0).unwrap(),
            total_luminance: l,
            cct_kelvin: k,
            baseline: None,
            bin: None,
            under_filled: false,
        }
    }

    #[test]
    fn large_per_bin_keeps_everything() {
        let m = DatasetManifest::new(
            (0..30)
                .map(|i| entry(1.0 + i as f64, 3000.0 + 100.0 * i as f64))
                .collect(),
        );
        let out = bin_and_sample(&m, 3, 3, 100, 0).unwrap();
        assert_eq!(out.len(), 30);
        let mut a: Vec<_> = out.entries.iter().map(|e| e.source.clone()).collect();
        let mut b: Vec<_> = m.entries.iter().map(|e| e.source.clone()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(out.entries.iter().all(|e| e.under_filled));
    }

    #[test]
    fn two_bins_of_hundred() {
        let m = DatasetManifest::new(
            (0..200)
                .map(|i| {
                    if i < 100 {
                        entry(1.0 + i as f64 * 1e-3, 4000.0)
                    } else {
                        entry(50.0 + i as f64 * 1e-3, 4000.0)
                    }
                })
                .collect(),
        );
        let out = bin_and_sample(&m, 2, 1, 10, 5).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(
            out.bin_populations().values().copied().collect::<Vec<_>>(),
            vec![10, 10]
        );
        assert_eq!(out, bin_and_sample(&m, 2, 1, 10, 5).unwrap());
        assert_ne!(out, bin_and_sample(&m, 2, 1, 10, 6).unwrap());
    }

    #[test]
    fn errors() {
        assert!(bin_and_sample(&DatasetManifest::default(), 2, 2, 1, 0).is_err());
        let m = DatasetManifest::new(vec![entry(1.0, 4000.0)]);
        assert!(bin_and_sample(&m, 0, 2, 1, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut m = DatasetManifest::new(vec![entry(1.5, 4000.0), entry(2.5, 6000.0)]);
        m.entries[1].bin = Some(3);
        m.entries[1].baseline = Some(Measurement {
            total_luminance: 1.0,
            cct_kelvin: 5000.0,
        });
        let mut buf = Vec::new();
        m.write_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 2);
        assert_eq!(DatasetManifest::read_jsonl(&buf[..]).unwrap(), m);
    }

    #[test]
    fn range_filter() {
        let base = Measurement {
            total_luminance: 10.0,
            cct_kelvin: 5000.0,
        };
        let f = RangeFilter {
            intensity_change: Some((-0.2, 0.2)),
            temperature_change: Some((-0.5, 0.5)),
        };
        assert!(f.accepts(&entry(11.0, 6000.0).with_baseline(base)));
        assert!(!f.accepts(&entry(13.0, 6000.0).with_baseline(base)));
        assert!(!f.accepts(&entry(10.0, 8000.0).with_baseline(base)));
        assert!(f.accepts(&entry(100.0, 8000.0)));
    }

    proptest! {
        #[test]
        fn well_populated_bins_balance(
            values in proptest::collection::vec((0.1f64..100.0, 2000.0f64..9000.0), 50..400),
            per_bin in 1usize..5,
            seed in 0u64..100,
        ) {
            let m = DatasetManifest::new(values.iter().map(|&(l, k)| entry(l, k)).collect());
            let out = bin_and_sample(&m, 3, 2, per_bin, seed).unwrap();
            let pops = out.bin_populations();
            if out.entries.iter().all(|e| !e.under_filled) {
                let lo = pops.values().min().unwrap();
                let hi = pops.values().max().unwrap();
                prop_assert!(hi - lo <= 1);
            }
            // Every entry's bin is consistent with its measurements.
            for e in &out.entries {
                let b = e.bin.unwrap();
                prop_assert!(b < 6);
            }
        }
    }
}
