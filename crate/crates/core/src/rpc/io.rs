//! RPC file formats: IKONOS-style `*_RPC.TXT` and a JSON mirror.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::RpcModel;
use crate::error::{Error, Result};

impl RpcModel {
    /// Loads either format, dispatching on the `.json` extension.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::load_json(path)
        } else {
            Self::load_txt(path)
        }
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: RpcModel = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        model.validated()
    }

    pub fn load_txt(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_txt(&text, path)
    }

    /// Parses `KEY: value [unit]` lines. Unknown keys are ignored.
    pub fn parse_txt(text: &str, origin: &Path) -> Result<Self> {
        let mut values: HashMap<String, (f64, usize)> = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, rest)) = line.split_once(':') else {
                return Err(Error::parse(origin, idx + 1, "expected `KEY: value`"));
            };
            let token = rest.split_whitespace().next().ok_or_else(|| {
                Error::parse(origin, idx + 1, format!("missing value for {}", key.trim()))
            })?;
            let v: f64 = token.parse().map_err(|_| {
                Error::parse(origin, idx + 1, format!("invalid number `{token}`"))
            })?;
            values.insert(key.trim().to_ascii_uppercase(), (v, idx + 1));
        }

        let get = |key: &str| -> Result<f64> {
            values
                .get(key)
                .map(|(v, _)| *v)
                .ok_or_else(|| Error::parse(origin, 0, format!("missing key {key}")))
        };
        let coeffs = |prefix: &str| -> Result<[f64; 20]> {
            let mut out = [0.0; 20];
            for (i, slot) in out.iter_mut().enumerate() {
                *slot = get(&format!("{prefix}_{}", i + 1))?;
            }
            Ok(out)
        };

        RpcModel {
            line_num: coeffs("LINE_NUM_COEFF")?,
            line_den: coeffs("LINE_DEN_COEFF")?,
            samp_num: coeffs("SAMP_NUM_COEFF")?,
            samp_den: coeffs("SAMP_DEN_COEFF")?,
            lat_off: get("LAT_OFF")?,
            lat_scale: get("LAT_SCALE")?,
            lon_off: get("LONG_OFF")?,
            lon_scale: get("LONG_SCALE")?,
            h_off: get("HEIGHT_OFF")?,
            h_scale: get("HEIGHT_SCALE")?,
            line_off: get("LINE_OFF")?,
            line_scale: get("LINE_SCALE")?,
            samp_off: get("SAMP_OFF")?,
            samp_scale: get("SAMP_SCALE")?,
        }
        .validated()
    }

    pub fn to_txt(&self) -> String {
        let mut s = String::new();
        let scalars = [
            ("LINE_OFF", self.line_off, "pixels"),
            ("SAMP_OFF", self.samp_off, "pixels"),
            ("LAT_OFF", self.lat_off, "degrees"),
            ("LONG_OFF", self.lon_off, "degrees"),
            ("HEIGHT_OFF", self.h_off, "meters"),
            ("LINE_SCALE", self.line_scale, "pixels"),
            ("SAMP_SCALE", self.samp_scale, "pixels"),
            ("LAT_SCALE", self.lat_scale, "degrees"),
            ("LONG_SCALE", self.lon_scale, "degrees"),
            ("HEIGHT_SCALE", self.h_scale, "meters"),
        ];
        for (k, v, unit) in scalars {
            let _ = writeln!(s, "{k}: {v:+.17e} {unit}");
        }
        for (prefix, c) in [
            ("LINE_NUM_COEFF", &self.line_num),
            ("LINE_DEN_COEFF", &self.line_den),
            ("SAMP_NUM_COEFF", &self.samp_num),
            ("SAMP_DEN_COEFF", &self.samp_den),
        ] {
            for (i, v) in c.iter().enumerate() {
                let _ = writeln!(s, "{prefix}_{}: {v:+.17e}", i + 1);
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let body = if is_json {
            serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?
        } else {
            self.to_txt()
        };
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpc::GroundPoint;
    use crate::synthetic::{affine_rpc, AffineCamera};

    fn model() -> RpcModel {
        affine_rpc(&AffineCamera::new(
            GroundPoint::new(41.2, -96.1, 300.0),
            0.3,
            2048,
            2048,
            40.0,
            15.0,
        ))
    }

    #[test]
    fn txt_with_units_round_trips() {
        let m = model();
        let text = m.to_txt();
        assert!(text.contains("LINE_OFF: "));
        assert!(text.contains(" pixels"));
        let back = RpcModel::parse_txt(&text, Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn ikonos_style_text_is_parsed() {
        let mut text = String::from(
            "LINE_OFF: +001024.00 pixels\nSAMP_OFF: +001024.00 pixels\n\
             LAT_OFF: +41.2000 degrees\nLONG_OFF: -096.1000 degrees\n\
             HEIGHT_OFF: +0300.000 meters\nLINE_SCALE: +001024.00 pixels\n\
             SAMP_SCALE: +001024.00 pixels\nLAT_SCALE: +00.0100 degrees\n\
             LONG_SCALE: +000.0100 degrees\nHEIGHT_SCALE: +0500.000 meters\n",
        );
        for prefix in ["LINE_NUM_COEFF", "LINE_DEN_COEFF", "SAMP_NUM_COEFF", "SAMP_DEN_COEFF"] {
            for i in 1..=20 {
                let v = match (prefix, i) {
                    ("LINE_DEN_COEFF" | "SAMP_DEN_COEFF", 1) => 2.0,
                    ("LINE_NUM_COEFF", 3) => -2.0,
                    ("SAMP_NUM_COEFF", 2) => 2.0,
                    _ => 0.0,
                };
                text.push_str(&format!("{prefix}_{i}: {v:+.6E}\n"));
            }
        }
        let m = RpcModel::parse_txt(&text, Path::new("x_RPC.TXT")).unwrap();
        assert_eq!(m.line_den[0], 1.0);
        assert_eq!(m.samp_num[1], 1.0);
        assert_eq!(m.line_num[2], -1.0);
        assert_eq!(m.h_scale, 500.0);
    }

    #[test]
    fn missing_key_is_reported() {
        let err = RpcModel::parse_txt("LINE_OFF: 1\n", Path::new("a")).unwrap_err();
        assert!(err.to_string().contains("missing key"));
    }

    #[test]
    fn bad_number_reports_line() {
        let err = RpcModel::parse_txt("LINE_OFF: 1\nSAMP_OFF: abc\n", Path::new("a")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = model();
        m.save(&path).unwrap();
        assert_eq!(RpcModel::load(&path).unwrap(), m);
        let txt = dir.path().join("m_RPC.TXT");
        m.save(&txt).unwrap();
        assert_eq!(RpcModel::load(&txt).unwrap(), m);
    }
}
