//! Participation-ratio and seam loss budgets for the resonator hardware.
//!
//! Each channel contributes `1/Q_i = p_i/q_i` (participation form) or
//! `y_seam/g_seam` (seam form); the per-channel limit is the quotient and
//! the total internal Q is the reciprocal of the summed reciprocals.
//!
//! Published budget tables print limits to one significant figure, and the
//! table totals follow from those printed limits; reports therefore carry
//! both the raw quotients and the as-printed arithmetic side by side.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossBudgetError {
    #[error("invalid channel '{name}': {reason}")]
    InvalidChannel { name: String, reason: String },
    #[error("budget has no channels")]
    EmptyBudget,
    #[error("budget parse error: {0}")]
    Parse(String),
}

/// Whether a quality number is a measured value or only a lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    Exact,
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Dielectric/conductor/interface loss: participation p against quality q.
    Participation,
    /// Mechanical joint: seam admittance y_seam against conductance g_seam,
    /// both in 1/(Ω·m).
    Seam,
}

/// One loss channel. `loss` is the participation p or seam admittance
/// y_seam; `quality` is the loss factor q or seam conductance g_seam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossChannel {
    pub name: String,
    pub kind: ChannelKind,
    pub loss: f64,
    pub quality: f64,
    pub bound: Bound,
}

impl LossChannel {
    pub fn participation(name: &str, p: f64, q: f64, bound: Bound) -> Self {
        Self {
            name: name.into(),
            kind: ChannelKind::Participation,
            loss: p,
            quality: q,
            bound,
        }
    }

    pub fn seam(name: &str, y_seam: f64, g_seam: f64, bound: Bound) -> Self {
        Self {
            name: name.into(),
            kind: ChannelKind::Seam,
            loss: y_seam,
            quality: g_seam,
            bound,
        }
    }

    pub fn validate(&self) -> Result<(), LossBudgetError> {
        let fail = |reason: String| LossBudgetError::InvalidChannel {
            name: self.name.clone(),
            reason,
        };
        if !self.loss.is_finite() || self.loss <= 0.0 {
            return Err(fail(format!(
                "loss factor must be positive and finite, got {}",
                self.loss
            )));
        }
        if self.kind == ChannelKind::Participation && self.loss > 1.0 {
            return Err(fail(format!(
                "participation must lie in (0, 1], got {}",
                self.loss
            )));
        }
        if !self.quality.is_finite() || self.quality <= 0.0 {
            return Err(fail(format!(
                "quality must be positive and finite, got {}",
                self.quality
            )));
        }
        Ok(())
    }
}

/// A channel listed in a budget without a measured quality; representable
/// but excluded from the Q arithmetic (e.g. stripline sidewalls).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnbudgetedChannel {
    pub name: String,
    pub kind: ChannelKind,
    pub loss: f64,
}

/// A quality factor together with its bound flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundedQ {
    pub value: f64,
    pub bound: Bound,
}

/// Round to `figs` significant figures, half away from zero.
pub fn round_sig_figs(x: f64, figs: u32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let exponent = x.abs().log10().floor() as i32;
    let power = figs as i32 - 1 - exponent;
    // Scale by an exactly representable power of ten on whichever side keeps
    // the reconstruction exact for table-sized magnitudes.
    if power >= 0 {
        let scale = 10f64.powi(power);
        (x * scale).round() / scale
    } else {
        let scale = 10f64.powi(-power);
        (x / scale).round() * scale
    }
}

/// Per-channel Q limit `quality/loss`, bound flag carried through.
pub fn channel_q_limit(channel: &LossChannel) -> BoundedQ {
    BoundedQ {
        value: channel.quality / channel.loss,
        bound: channel.bound,
    }
}

/// Total Q: reciprocal of the summed per-channel reciprocals. The total is
/// a lower bound iff any constituent quality is a lower bound.
pub fn total_q(channels: &[LossChannel]) -> Result<BoundedQ, LossBudgetError> {
    if channels.is_empty() {
        return Err(LossBudgetError::EmptyBudget);
    }
    let mut inv_sum = 0.0f64;
    let mut bound = Bound::Exact;
    for ch in channels {
        ch.validate()?;
        inv_sum += ch.loss / ch.quality;
        if ch.bound == Bound::LowerBound {
            bound = Bound::LowerBound;
        }
    }
    Ok(BoundedQ {
        value: 1.0 / inv_sum,
        bound,
    })
}

/// Seam relevance threshold Q = g_seam/y_seam: the seam only matters for
/// internal quality factors approaching this value.
pub fn seam_relevance_q(y_seam: f64, g_seam: f64) -> f64 {
    g_seam / y_seam
}

/// Fraction of the total loss carried by each channel (raw quotients);
/// fractions sum to one.
pub fn loss_shares(channels: &[LossChannel]) -> Vec<f64> {
    let inv_sum: f64 = channels.iter().map(|c| c.loss / c.quality).sum();
    channels
        .iter()
        .map(|c| (c.loss / c.quality) / inv_sum)
        .collect()
}

/// Indices of the channels with the largest loss share (ties all reported,
/// in list order) together with that share.
pub fn dominant_channel(channels: &[LossChannel]) -> Result<(Vec<usize>, f64), LossBudgetError> {
    if channels.is_empty() {
        return Err(LossBudgetError::EmptyBudget);
    }
    let shares = loss_shares(channels);
    let max = shares.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners = shares
        .iter()
        .enumerate()
        .filter(|(_, &s)| (s - max).abs() <= 1e-12)
        .map(|(i, _)| i)
        .collect();
    Ok((winners, max))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelReport {
    pub name: String,
    pub kind: ChannelKind,
    pub loss: f64,
    pub quality: f64,
    pub bound: Bound,
    pub q_limit_raw: f64,
    /// Raw limit rounded to one significant figure, as budget tables print it.
    pub q_limit_printed: f64,
    /// Share of the total loss, computed from the printed limits.
    pub loss_share_printed: f64,
    /// Share of the total loss, computed from the raw quotients.
    pub loss_share_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBudgetReport {
    pub title: String,
    pub channels: Vec<ChannelReport>,
    pub unbudgeted: Vec<UnbudgetedChannel>,
    /// Reciprocal of the raw reciprocal sum.
    pub total_q_raw: f64,
    /// Table arithmetic: reciprocal sum over the printed per-channel limits,
    /// rounded to one significant figure.
    pub total_q_printed: f64,
    pub total_bound: Bound,
    /// Total excluding lower-bound channels; present only when the budget
    /// mixes bound kinds.
    pub optimistic_total_q_raw: Option<f64>,
    pub optimistic_total_q_printed: Option<f64>,
    /// Names of the dominant channels (ties all listed) and their printed
    /// loss share.
    pub dominant_channels: Vec<String>,
    pub dominant_share: f64,
}

/// Compute the full budget report from validated channels.
pub fn compute_budget(
    title: &str,
    channels: &[LossChannel],
    unbudgeted: &[UnbudgetedChannel],
) -> Result<LossBudgetReport, LossBudgetError> {
    let total = total_q(channels)?;
    let raw_shares = loss_shares(channels);

    let printed_limits: Vec<f64> = channels
        .iter()
        .map(|c| round_sig_figs(channel_q_limit(c).value, 1))
        .collect();
    let printed_inv_sum: f64 = printed_limits.iter().map(|q| 1.0 / q).sum();
    let printed_shares: Vec<f64> = printed_limits
        .iter()
        .map(|q| (1.0 / q) / printed_inv_sum)
        .collect();

    let reports: Vec<ChannelReport> = channels
        .iter()
        .zip(printed_limits.iter())
        .zip(printed_shares.iter().zip(raw_shares.iter()))
        .map(|((ch, &printed), (&share_p, &share_r))| ChannelReport {
            name: ch.name.clone(),
            kind: ch.kind,
            loss: ch.loss,
            quality: ch.quality,
            bound: ch.bound,
            q_limit_raw: channel_q_limit(ch).value,
            q_limit_printed: printed,
            loss_share_printed: share_p,
            loss_share_raw: share_r,
        })
        .collect();

    let has_bounds = channels.iter().any(|c| c.bound == Bound::LowerBound);
    let (optimistic_raw, optimistic_printed) = if has_bounds {
        let exact: Vec<LossChannel> = channels
            .iter()
            .filter(|c| c.bound == Bound::Exact)
            .cloned()
            .collect();
        if exact.is_empty() {
            (None, None)
        } else {
            let raw = total_q(&exact)?.value;
            let inv: f64 = exact
                .iter()
                .map(|c| 1.0 / round_sig_figs(channel_q_limit(c).value, 1))
                .sum();
            (Some(raw), Some(round_sig_figs(1.0 / inv, 1)))
        }
    } else {
        (None, None)
    };

    let max_share = printed_shares
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let dominant: Vec<String> = channels
        .iter()
        .zip(printed_shares.iter())
        .filter(|(_, &s)| (s - max_share).abs() <= 1e-12)
        .map(|(c, _)| c.name.clone())
        .collect();

    Ok(LossBudgetReport {
        title: title.to_string(),
        channels: reports,
        unbudgeted: unbudgeted.to_vec(),
        total_q_raw: total.value,
        total_q_printed: round_sig_figs(1.0 / printed_inv_sum, 1),
        total_bound: total.bound,
        optimistic_total_q_raw: optimistic_raw,
        optimistic_total_q_printed: optimistic_printed,
        dominant_channels: dominant,
        dominant_share: max_share,
    })
}

// ---------------------------------------------------------------------------
// Budget file parsing (key-value tree with a channels list)
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct BudgetFile {
    title: Option<String>,
    #[serde(default)]
    channels: Vec<ChannelEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelEntry {
    name: String,
    kind: String,
    participation: Option<f64>,
    y_seam: Option<f64>,
    quality: Option<f64>,
    g_seam: Option<f64>,
    bound: Option<String>,
}

/// Parsed budget: channels with quality numbers, plus any channels listed
/// without one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBudget {
    pub title: String,
    pub channels: Vec<LossChannel>,
    pub unbudgeted: Vec<UnbudgetedChannel>,
}

/// Parse a budget document.
///
/// Each `[[channels]]` entry carries `name`, `kind` (`participation` or
/// `seam`), the loss number (`participation` or `y_seam`), optionally the
/// quality number (`quality` or `g_seam`), and an optional `bound`
/// (`exact` by default, or `lower-bound`).
pub fn parse_budget(text: &str) -> Result<ParsedBudget, LossBudgetError> {
    let file: BudgetFile =
        toml::from_str(text).map_err(|e| LossBudgetError::Parse(e.to_string()))?;
    let mut channels = Vec::new();
    let mut unbudgeted = Vec::new();
    for (i, entry) in file.channels.iter().enumerate() {
        let context = format!("channel {} ('{}')", i + 1, entry.name);
        let kind = match entry.kind.as_str() {
            "participation" => ChannelKind::Participation,
            "seam" => ChannelKind::Seam,
            other => {
                return Err(LossBudgetError::Parse(format!(
                    "{context}: unknown kind '{other}' (expected 'participation' or 'seam')"
                )))
            }
        };
        let (loss, quality) = match kind {
            ChannelKind::Participation => {
                if entry.y_seam.is_some() || entry.g_seam.is_some() {
                    return Err(LossBudgetError::Parse(format!(
                        "{context}: participation channels use 'participation'/'quality', \
                         not seam fields"
                    )));
                }
                let p = entry.participation.ok_or_else(|| {
                    LossBudgetError::Parse(format!("{context}: missing 'participation'"))
                })?;
                (p, entry.quality)
            }
            ChannelKind::Seam => {
                if entry.participation.is_some() || entry.quality.is_some() {
                    return Err(LossBudgetError::Parse(format!(
                        "{context}: seam channels use 'y_seam'/'g_seam', \
                         not participation fields"
                    )));
                }
                let y = entry.y_seam.ok_or_else(|| {
                    LossBudgetError::Parse(format!("{context}: missing 'y_seam'"))
                })?;
                (y, entry.g_seam)
            }
        };
        let bound = match entry.bound.as_deref() {
            None | Some("exact") => Bound::Exact,
            Some("lower-bound") => Bound::LowerBound,
            Some(other) => {
                return Err(LossBudgetError::Parse(format!(
                    "{context}: unknown bound '{other}' (expected 'exact' or 'lower-bound')"
                )))
            }
        };
        match quality {
            Some(q) => {
                let ch = LossChannel {
                    name: entry.name.clone(),
                    kind,
                    loss,
                    quality: q,
                    bound,
                };
                ch.validate()?;
                channels.push(ch);
            }
            None => {
                if !loss.is_finite() || loss <= 0.0 {
                    return Err(LossBudgetError::Parse(format!(
                        "{context}: loss factor must be positive and finite, got {loss}"
                    )));
                }
                unbudgeted.push(UnbudgetedChannel {
                    name: entry.name.clone(),
                    kind,
                    loss,
                });
            }
        }
    }
    Ok(ParsedBudget {
        title: file.title.unwrap_or_else(|| "loss budget".into()),
        channels,
        unbudgeted,
    })
}

/// Render the report as an aligned text table.
pub fn render_text_table(report: &LossBudgetReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {}\n", report.title));
    out.push_str(&format!(
        "{:<24} {:<14} {:>12} {:>12} {:>12} {:>10} {:>8}\n",
        "Loss channel", "Kind", "Loss", "Quality", "Q limit", "Printed", "Share"
    ));
    for ch in &report.channels {
        let kind = match ch.kind {
            ChannelKind::Participation => "participation",
            ChannelKind::Seam => "seam",
        };
        let bound_mark = match ch.bound {
            Bound::Exact => "",
            Bound::LowerBound => ">",
        };
        let raw = format!("{bound_mark}{:.3e}", ch.q_limit_raw);
        let printed = format!("{bound_mark}{:e}", ch.q_limit_printed);
        out.push_str(&format!(
            "{:<24} {:<14} {:>12.3e} {:>12.3e} {raw:>12} {printed:>10} {:>7.1}%\n",
            ch.name,
            kind,
            ch.loss,
            ch.quality,
            ch.loss_share_printed * 100.0
        ));
    }
    for ch in &report.unbudgeted {
        let kind = match ch.kind {
            ChannelKind::Participation => "participation",
            ChannelKind::Seam => "seam",
        };
        out.push_str(&format!(
            "{:<24} {:<14} {:>12.3e} {:>12} {:>12} {:>10} {:>8}\n",
            ch.name, kind, ch.loss, "(no q)", "-", "-", "-"
        ));
    }
    let total_mark = match report.total_bound {
        Bound::Exact => "",
        Bound::LowerBound => "≥ ",
    };
    out.push_str(&format!(
        "Expected total Q: {}{:.3e} (printed {}{:e})\n",
        total_mark, report.total_q_raw, total_mark, report.total_q_printed
    ));
    if let (Some(raw), Some(printed)) = (
        report.optimistic_total_q_raw,
        report.optimistic_total_q_printed,
    ) {
        out.push_str(&format!(
            "Optimistic total Q (lower-bound channels excluded): {raw:.3e} (printed {printed:e})\n"
        ));
    }
    out.push_str(&format!(
        "Dominant channel: {} at {:.1}% of the loss\n",
        report.dominant_channels.join(", "),
        report.dominant_share * 100.0
    ));
    out
}
