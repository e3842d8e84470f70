use crate::domain::{Minutes, WeatherRecord, WEATHER_STEP};

use super::IngestError;

/// Buckets records into consecutive hourly slots `[start, end]` (both
/// hour-aligned). Later records for the same hour replace earlier ones.
pub fn hourly_slots(records: &[WeatherRecord], start: Minutes, end: Minutes) -> Vec<Option<WeatherRecord>> {
    let n = if end < start { 0 } else { ((end - start) / WEATHER_STEP + 1) as usize };
    let mut slots = vec![None; n];
    for r in records {
        let k = (r.timestamp - start).div_euclid(WEATHER_STEP);
        if k >= 0 && (k as usize) < n {
            slots[k as usize] = Some(r.clone());
        }
    }
    slots
}

/// Fills gaps in an hourly series. Continuous fields are interpolated
/// linearly between the surrounding observations and held flat beyond the
/// first/last one; the pavement flag copies the nearest observation, ties
/// going to the earlier one. Slot `k` gets timestamp `start + 60k`.
pub fn interpolate_weather(slots: &[Option<WeatherRecord>], start: Minutes) -> Result<Vec<WeatherRecord>, IngestError> {
    let observed: Vec<usize> = slots
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|_| i))
        .collect();
    if observed.is_empty() {
        return Err(IngestError::NoWeather);
    }
    let mut out = Vec::with_capacity(slots.len());
    let mut next_pos = 0usize;
    for k in 0..slots.len() {
        let ts = start + k as Minutes * WEATHER_STEP;
        while next_pos < observed.len() && observed[next_pos] < k {
            next_pos += 1;
        }
        if let Some(rec) = &slots[k] {
            out.push(WeatherRecord { timestamp: ts, ..rec.clone() });
            continue;
        }
        let prev = next_pos.checked_sub(1).map(|p| observed[p]);
        let next = observed.get(next_pos).copied();
        let rec = match (prev, next) {
            (Some(p), Some(n)) => {
                let a = slots[p].as_ref().unwrap();
                let b = slots[n].as_ref().unwrap();
                let w = (k - p) as f64 / (n - p) as f64;
                let ca = a.continuous();
                let cb = b.continuous();
                let mut c = [0.0; 6];
                for j in 0..6 {
                    c[j] = ca[j] + (cb[j] - ca[j]) * w;
                }
                let wet = if k - p <= n - k { a.pavement_wet } else { b.pavement_wet };
                WeatherRecord::from_continuous(ts, c, wet)
            }
            (Some(p), None) => WeatherRecord { timestamp: ts, ..slots[p].clone().unwrap() },
            (None, Some(n)) => WeatherRecord { timestamp: ts, ..slots[n].clone().unwrap() },
            (None, None) => unreachable!("at least one observation"),
        };
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(temp: f64, wet: bool) -> Option<WeatherRecord> {
        Some(WeatherRecord::from_continuous(0, [temp, 50.0, 5.0, 30.0, 10.0, 0.0], wet))
    }

    #[test]
    fn midpoint_interpolation() {
        let out = interpolate_weather(&[rec(50.0, false), None, rec(60.0, false)], 0).unwrap();
        let temps: Vec<f64> = out.iter().map(|r| r.temperature).collect();
        assert_eq!(temps, vec![50.0, 55.0, 60.0]);
        assert_eq!(out[1].timestamp, 60);
    }

    #[test]
    fn pavement_nearest_tie_goes_earlier() {
        let out = interpolate_weather(&[rec(50.0, false), None, rec(60.0, true)], 0).unwrap();
        let wet: Vec<bool> = out.iter().map(|r| r.pavement_wet).collect();
        assert_eq!(wet, vec![false, false, true]);
        let out = interpolate_weather(&[rec(50.0, false), None, None, rec(60.0, true)], 0).unwrap();
        let wet: Vec<bool> = out.iter().map(|r| r.pavement_wet).collect();
        assert_eq!(wet, vec![false, false, true, true]);
    }

    #[test]
    fn single_record_extends_flat() {
        let out = interpolate_weather(&[None, rec(42.0, true), None], 120).unwrap();
        assert!(out.iter().all(|r| r.temperature == 42.0 && r.pavement_wet));
        assert_eq!(out[2].timestamp, 240);
        assert!(interpolate_weather(&[None, None], 0).is_err());
    }

    #[test]
    fn slots_bucket_by_hour() {
        let mut a = rec(1.0, false).unwrap();
        a.timestamp = 60;
        let slots = hourly_slots(&[a], 0, 180);
        assert_eq!(slots.len(), 4);
        assert!(slots[1].is_some() && slots[0].is_none());
    }
}
