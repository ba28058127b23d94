//! Parses `--post` strings into postprocessor specs.
//!
//! Grammar: `name[:key=value,...]` with keys `T` (temperature), `eps`
//! (perturbation size), `p` (percentage for the top-k variant). Names:
//! `msp`, `tempscale`, `energy`, `odin`, `iodin-topk`, `iodin-channel`.

use oodkit::config::PostprocessorSpec;
use oodkit::error::{Error, Result};

pub fn parse_post(s: &str) -> Result<PostprocessorSpec> {
    let (name, args) = match s.split_once(':') {
        Some((n, a)) => (n, a),
        None => (s, ""),
    };
    let mut t: Option<f64> = None;
    let mut eps: Option<f64> = None;
    let mut p: Option<f64> = None;
    for pair in args.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::ConfigParse(format!("bad postprocessor arg `{pair}`")))?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::ConfigParse(format!("bad number `{v}` in `{s}`")))?;
        match k.trim() {
            "T" | "t" => t = Some(value),
            "eps" => eps = Some(value),
            "p" => p = Some(value),
            other => {
                return Err(Error::ConfigParse(format!(
                    "unknown postprocessor arg `{other}` in `{s}`"
                )))
            }
        }
    }
    let spec = match name {
        "msp" => PostprocessorSpec::Msp,
        "tempscale" => PostprocessorSpec::Tempscale {
            temperature: t.unwrap_or(1000.0),
        },
        "energy" => PostprocessorSpec::Energy {
            temperature: t.unwrap_or(1.0),
        },
        "odin" => PostprocessorSpec::Odin {
            temperature: t.unwrap_or(1000.0),
            epsilon: eps.unwrap_or(0.0014),
        },
        "iodin-topk" => PostprocessorSpec::IodinTopk {
            temperature: t.unwrap_or(1000.0),
            epsilon: eps.unwrap_or(0.0014),
            p_inv: p.unwrap_or(10.0),
        },
        "iodin-channel" => PostprocessorSpec::IodinChannel {
            temperature: t.unwrap_or(1000.0),
            epsilon: eps.unwrap_or(0.0014),
        },
        other => {
            return Err(Error::ConfigParse(format!(
                "unknown postprocessor `{other}` (expected msp, tempscale, energy, odin, iodin-topk, iodin-channel)"
            )))
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_bare_and_parameterized_names() {
        assert_eq!(parse_post("msp").unwrap(), PostprocessorSpec::Msp);
        assert_eq!(
            parse_post("odin:T=1000,eps=0.0014").unwrap(),
            PostprocessorSpec::Odin {
                temperature: 1000.0,
                epsilon: 0.0014
            }
        );
        assert_eq!(
            parse_post("iodin-topk:T=10,eps=0.002,p=25").unwrap(),
            PostprocessorSpec::IodinTopk {
                temperature: 10.0,
                epsilon: 0.002,
                p_inv: 25.0
            }
        );
    }

    #[test]
    fn rejects_unknown_names_and_args() {
        assert!(parse_post("mahalanobis").is_err());
        assert!(parse_post("odin:zeta=3").is_err());
        assert!(parse_post("odin:T=abc").is_err());
    }
}
