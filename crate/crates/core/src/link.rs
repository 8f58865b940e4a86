//! Physical link description: fiber spans, lumped optical elements, delays,
//! loss budget and WDM crosstalk.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::PowerLawNoiseModel;

/// Group velocity in standard single-mode fiber, m/s.
pub const DEFAULT_GROUP_VELOCITY: f64 = 2.0e8;
/// Carrier of the 1542.14 nm metrology laser, Hz.
pub const DEFAULT_CARRIER_HZ: f64 = 1.944e14;
/// Below this received power the budget warns about heterodyne detection.
pub const DEFAULT_SENSITIVITY_W: f64 = 10e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberSpan {
    pub id: String,
    pub length_km: f64,
    pub lineic_noise: PowerLawNoiseModel,
    pub loss_db: f64,
    pub group_velocity_m_per_s: f64,
}

impl FiberSpan {
    pub fn new(
        id: impl Into<String>,
        length_km: f64,
        lineic_noise: PowerLawNoiseModel,
        loss_db: f64,
    ) -> Result<Self> {
        let span = Self {
            id: id.into(),
            length_km,
            lineic_noise,
            loss_db,
            group_velocity_m_per_s: DEFAULT_GROUP_VELOCITY,
        };
        span.validate()?;
        Ok(span)
    }

    pub fn with_group_velocity(mut self, v: f64) -> Result<Self> {
        self.group_velocity_m_per_s = v;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.length_km.is_finite() && self.length_km > 0.0) {
            return Err(Error::Link(format!(
                "span '{}': length_km must be > 0, got {}",
                self.id, self.length_km
            )));
        }
        if !(self.loss_db.is_finite() && self.loss_db >= 0.0) {
            return Err(Error::Link(format!(
                "span '{}': loss_db must be >= 0, got {}",
                self.id, self.loss_db
            )));
        }
        let v = self.group_velocity_m_per_s;
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Link(format!(
                "span '{}': group_velocity_m_per_s must be > 0, got {v}",
                self.id
            )));
        }
        Ok(())
    }

    /// One-way propagation delay, s.
    pub fn delay_s(&self) -> f64 {
        self.length_km * 1000.0 / self.group_velocity_m_per_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Oadm,
    Connector,
    Amplifier,
    Coupler,
}

impl ElementKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "oadm" => Some(Self::Oadm),
            "connector" => Some(Self::Connector),
            "amplifier" => Some(Self::Amplifier),
            "coupler" => Some(Self::Coupler),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Oadm => "oadm",
            Self::Connector => "connector",
            Self::Amplifier => "amplifier",
            Self::Coupler => "coupler",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticalElement {
    pub id: String,
    pub kind: ElementKind,
    pub insertion_loss_db: f64,
    /// Amplifiers only.
    pub gain_db: f64,
    /// Oadm only: isolation towards the adjacent (100 GHz) channel.
    pub isolation_adjacent_db: f64,
    /// Oadm only: isolation towards all other channels.
    pub isolation_other_db: f64,
    pub bidirectional: bool,
}

impl OpticalElement {
    pub fn passive(id: impl Into<String>, kind: ElementKind, insertion_loss_db: f64) -> Self {
        Self {
            id: id.into(),
            kind,
            insertion_loss_db,
            gain_db: 0.0,
            isolation_adjacent_db: 0.0,
            isolation_other_db: 0.0,
            bidirectional: true,
        }
    }

    /// Add-drop multiplexer with the off-the-shelf figures: 1.2 dB add/drop
    /// loss, 25 dB adjacent and 40 dB other-channel isolation.
    pub fn standard_oadm(id: impl Into<String>) -> Self {
        Self {
            isolation_adjacent_db: 25.0,
            isolation_other_db: 40.0,
            ..Self::passive(id, ElementKind::Oadm, 1.2)
        }
    }

    pub fn amplifier(id: impl Into<String>, gain_db: f64) -> Self {
        Self {
            gain_db,
            ..Self::passive(id, ElementKind::Amplifier, 0.0)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, v: f64| {
            Error::Link(format!(
                "element '{}': {field} must be >= 0, got {v}",
                self.id
            ))
        };
        for (field, v) in [
            ("insertion_loss_db", self.insertion_loss_db),
            ("gain_db", self.gain_db),
            ("isolation_adjacent_db", self.isolation_adjacent_db),
            ("isolation_other_db", self.isolation_other_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(field, v));
            }
        }
        if self.kind != ElementKind::Amplifier && self.gain_db != 0.0 {
            return Err(Error::Link(format!(
                "element '{}': only amplifiers may have gain",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LinkEntry {
    Span(FiberSpan),
    Element(OpticalElement),
}

impl LinkEntry {
    pub fn id(&self) -> &str {
        match self {
            Self::Span(s) => &s.id,
            Self::Element(e) => &e.id,
        }
    }
}

/// Structured description accepted by [`build_link`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub entries: Vec<EntryConfig>,
    pub carrier_frequency_hz: Option<f64>,
    pub input_power_w: Option<f64>,
    pub sensitivity_w: Option<f64>,
}

/// One ordered entry; `kind` is `"span"` or an element kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EntryConfig {
    pub id: String,
    pub kind: String,
    pub length_km: Option<f64>,
    pub loss_db: Option<f64>,
    pub group_velocity_m_per_s: Option<f64>,
    pub lineic_noise: Option<PowerLawNoiseModel>,
    pub insertion_loss_db: Option<f64>,
    pub gain_db: Option<f64>,
    pub isolation_adjacent_db: Option<f64>,
    pub isolation_other_db: Option<f64>,
    pub bidirectional: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTopology {
    entries: Vec<LinkEntry>,
    pub carrier_frequency_hz: f64,
    pub input_power_w: f64,
    pub sensitivity_w: f64,
}

impl LinkTopology {
    pub fn new(
        entries: Vec<LinkEntry>,
        carrier_frequency_hz: f64,
        input_power_w: f64,
    ) -> Result<Self> {
        if !entries.iter().any(|e| matches!(e, LinkEntry::Span(_))) {
            return Err(Error::Link("link needs at least one span".into()));
        }
        for e in &entries {
            match e {
                LinkEntry::Span(s) => s.validate()?,
                LinkEntry::Element(el) => el.validate()?,
            }
        }
        if !(carrier_frequency_hz.is_finite() && carrier_frequency_hz > 0.0) {
            return Err(Error::Link(format!(
                "carrier frequency must be > 0, got {carrier_frequency_hz}"
            )));
        }
        if !(input_power_w.is_finite() && input_power_w > 0.0) {
            return Err(Error::Link(format!(
                "input power must be > 0, got {input_power_w}"
            )));
        }
        Ok(Self {
            entries,
            carrier_frequency_hz,
            input_power_w,
            sensitivity_w: DEFAULT_SENSITIVITY_W,
        })
    }

    /// Single bare span, default carrier, 1 mW input.
    pub fn single_span(span: FiberSpan) -> Result<Self> {
        Self::new(vec![LinkEntry::Span(span)], DEFAULT_CARRIER_HZ, 1e-3)
    }

    pub fn with_sensitivity(mut self, sensitivity_w: f64) -> Result<Self> {
        if !(sensitivity_w.is_finite() && sensitivity_w >= 0.0) {
            return Err(Error::Link(format!(
                "sensitivity must be >= 0, got {sensitivity_w}"
            )));
        }
        self.sensitivity_w = sensitivity_w;
        Ok(self)
    }

    pub fn entries(&self) -> &[LinkEntry] {
        &self.entries
    }

    pub fn spans(&self) -> impl Iterator<Item = &FiberSpan> {
        self.entries.iter().filter_map(|e| match e {
            LinkEntry::Span(s) => Some(s),
            LinkEntry::Element(_) => None,
        })
    }

    pub fn elements(&self) -> impl Iterator<Item = &OpticalElement> {
        self.entries.iter().filter_map(|e| match e {
            LinkEntry::Element(el) => Some(el),
            LinkEntry::Span(_) => None,
        })
    }

    pub fn total_length_km(&self) -> f64 {
        self.spans().map(|s| s.length_km).sum()
    }

    /// Total one-way propagation delay (sum of span delays), s.
    pub fn one_way_delay_s(&self) -> f64 {
        self.spans().map(FiberSpan::delay_s).sum()
    }

    /// Spans with the distance and delay of their input end from the link input.
    pub fn span_offsets(&self) -> Vec<(&FiberSpan, f64, f64)> {
        let mut z = 0.0;
        let mut t = 0.0;
        let mut out = Vec::new();
        for s in self.spans() {
            out.push((s, z, t));
            z += s.length_km;
            t += s.delay_s();
        }
        out
    }

    /// One-way delay from the input to `position_km`.
    pub fn delay_at(&self, position_km: f64) -> Result<f64> {
        let total = self.total_length_km();
        if !(position_km.is_finite() && (0.0..=total * (1.0 + 1e-12)).contains(&position_km)) {
            return Err(Error::PositionOutOfRange {
                position_km,
                length_km: total,
            });
        }
        let mut remaining = position_km;
        let mut t = 0.0;
        for s in self.spans() {
            if remaining <= s.length_km {
                return Ok(t + remaining * 1000.0 / s.group_velocity_m_per_s);
            }
            remaining -= s.length_km;
            t += s.delay_s();
        }
        Ok(t)
    }
}

/// Validate a structured description into a topology.
pub fn build_link(config: &LinkConfig) -> Result<LinkTopology> {
    if !config.entries.iter().any(|e| e.kind == "span") {
        return Err(Error::Link("empty span list".into()));
    }
    let mut entries = Vec::with_capacity(config.entries.len());
    for e in &config.entries {
        let entry = if e.kind == "span" {
            let length = e
                .length_km
                .ok_or_else(|| Error::Link(format!("span '{}': length_km is required", e.id)))?;
            let noise = e
                .lineic_noise
                .clone()
                .unwrap_or_else(|| PowerLawNoiseModel::silent(true));
            let span = FiberSpan::new(e.id.clone(), length, noise, e.loss_db.unwrap_or(0.0))?
                .with_group_velocity(e.group_velocity_m_per_s.unwrap_or(DEFAULT_GROUP_VELOCITY))?;
            LinkEntry::Span(span)
        } else {
            let kind = ElementKind::parse(&e.kind).ok_or_else(|| {
                Error::Link(format!("element '{}': unknown kind '{}'", e.id, e.kind))
            })?;
            let el = OpticalElement {
                id: e.id.clone(),
                kind,
                insertion_loss_db: e.insertion_loss_db.unwrap_or(0.0),
                gain_db: e.gain_db.unwrap_or(0.0),
                isolation_adjacent_db: e.isolation_adjacent_db.unwrap_or(0.0),
                isolation_other_db: e.isolation_other_db.unwrap_or(0.0),
                bidirectional: e.bidirectional.unwrap_or(true),
            };
            LinkEntry::Element(el)
        };
        entries.push(entry);
    }
    let link = LinkTopology::new(
        entries,
        config.carrier_frequency_hz.unwrap_or(DEFAULT_CARRIER_HZ),
        config.input_power_w.unwrap_or(1e-3),
    )?;
    link.with_sensitivity(config.sensitivity_w.unwrap_or(DEFAULT_SENSITIVITY_W))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub id: String,
    pub kind: String,
    pub loss_db: f64,
    pub gain_db: f64,
    /// Net loss from the input up to and including this entry.
    pub cumulative_db: f64,
    /// Power after this entry.
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub ledger: Vec<LedgerEntry>,
    /// Sum of span and element losses, gains excluded.
    pub total_one_way_loss_db: f64,
    pub total_gain_db: f64,
    /// Losses minus gains along the forward path.
    pub net_one_way_db: f64,
    pub total_round_trip_loss_db: f64,
    pub net_round_trip_db: f64,
    pub input_power_w: f64,
    pub output_power_w: f64,
    /// Power of the round-trip signal back at the input.
    pub return_power_w: f64,
    pub warnings: Vec<String>,
}

fn db_to_ratio(db: f64) -> f64 {
    10f64.powf(-db / 10.0)
}

/// Loss/gain ledger, node powers and detection warnings.
pub fn link_budget(link: &LinkTopology) -> BudgetReport {
    let mut ledger = Vec::new();
    let mut warnings = Vec::new();
    let mut cumulative = 0.0;
    let mut loss_sum = 0.0;
    let mut gain_sum = 0.0;
    let mut round_trip_loss = 0.0;
    let mut round_trip_gain = 0.0;
    for entry in link.entries() {
        let (id, kind, loss, gain, bidirectional) = match entry {
            LinkEntry::Span(s) => (s.id.clone(), "span".to_string(), s.loss_db, 0.0, true),
            LinkEntry::Element(e) => (
                e.id.clone(),
                e.kind.to_string(),
                e.insertion_loss_db,
                e.gain_db,
                e.bidirectional,
            ),
        };
        if !bidirectional {
            warnings.push(format!(
                "element '{id}' is not bidirectional; the round-trip path is blocked"
            ));
        }
        loss_sum += loss;
        gain_sum += gain;
        round_trip_loss += 2.0 * loss;
        round_trip_gain += 2.0 * gain;
        cumulative += loss - gain;
        let power_w = link.input_power_w * db_to_ratio(cumulative);
        if power_w < link.sensitivity_w {
            warnings.push(format!(
                "power after '{id}' is {power_w:.3e} W, below {:.3e} W: heterodyne detection marginal",
                link.sensitivity_w
            ));
        }
        ledger.push(LedgerEntry {
            id,
            kind,
            loss_db: loss,
            gain_db: gain,
            cumulative_db: cumulative,
            power_w,
        });
    }
    let net_round_trip = round_trip_loss - round_trip_gain;
    let return_power_w = link.input_power_w * db_to_ratio(net_round_trip);
    if return_power_w < link.sensitivity_w {
        warnings.push(format!(
            "round-trip return power is {return_power_w:.3e} W, below {:.3e} W: heterodyne detection marginal",
            link.sensitivity_w
        ));
    }
    BudgetReport {
        output_power_w: link.input_power_w * db_to_ratio(cumulative),
        ledger,
        total_one_way_loss_db: loss_sum,
        total_gain_db: gain_sum,
        net_one_way_db: loss_sum - gain_sum,
        total_round_trip_loss_db: round_trip_loss,
        net_round_trip_db: net_round_trip,
        input_power_w: link.input_power_w,
        return_power_w,
        warnings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosstalkEntry {
    pub oadm_id: String,
    pub isolation_db: f64,
    pub leaked_w: f64,
    /// Metrology power arriving at the multiplexer.
    pub metrology_power_w: f64,
    /// Metrology power over leaked data power, dB.
    pub margin_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrosstalkReport {
    pub channel_separation: u32,
    pub data_channel_power_w: f64,
    pub entries: Vec<CrosstalkEntry>,
}

/// Data-channel leakage into the metrology path at every add-drop multiplexer.
///
/// `channel_separation` counts 100 GHz grid slots between the data and
/// metrology channels; 1 uses the adjacent-channel isolation.
pub fn crosstalk_report(
    link: &LinkTopology,
    data_channel_power_w: f64,
    channel_separation: u32,
) -> Result<CrosstalkReport> {
    if channel_separation == 0 {
        return Err(Error::Link(
            "data and metrology channels must differ (separation >= 1)".into(),
        ));
    }
    if !(data_channel_power_w.is_finite() && data_channel_power_w >= 0.0) {
        return Err(Error::Link(format!(
            "data channel power must be >= 0, got {data_channel_power_w}"
        )));
    }
    let mut entries = Vec::new();
    let mut power = link.input_power_w;
    for entry in link.entries() {
        match entry {
            LinkEntry::Span(s) => power *= db_to_ratio(s.loss_db),
            LinkEntry::Element(e) => {
                if e.kind == ElementKind::Oadm {
                    let isolation_db = if channel_separation == 1 {
                        e.isolation_adjacent_db
                    } else {
                        e.isolation_other_db
                    };
                    let leaked_w = data_channel_power_w * db_to_ratio(isolation_db);
                    let margin_db = if leaked_w > 0.0 {
                        10.0 * (power / leaked_w).log10()
                    } else {
                        f64::INFINITY
                    };
                    entries.push(CrosstalkEntry {
                        oadm_id: e.id.clone(),
                        isolation_db,
                        leaked_w,
                        metrology_power_w: power,
                        margin_db,
                    });
                }
                power *= db_to_ratio(e.insertion_loss_db - e.gain_db);
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::NoOadm);
    }
    Ok(CrosstalkReport {
        channel_separation,
        data_channel_power_w,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayPoint {
    pub position_km: f64,
    /// Input to `position_km`.
    pub one_way_s: f64,
    /// Delay with which noise picked up at this point on the outbound pass
    /// reaches the round-trip beat (2 tau - tau_z).
    pub outbound_beat_s: f64,
    /// Same for the return pass (tau_z).
    pub return_beat_s: f64,
}

/// One-way and round-trip delays at the requested positions.
pub fn propagation_delays(link: &LinkTopology, positions_km: &[f64]) -> Result<Vec<DelayPoint>> {
    let total = link.one_way_delay_s();
    positions_km
        .iter()
        .map(|&z| {
            let t = link.delay_at(z)?;
            Ok(DelayPoint {
                position_km: z,
                one_way_s: t,
                outbound_beat_s: 2.0 * total - t,
                return_beat_s: t,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(id: &str, km: f64, loss: f64) -> LinkEntry {
        LinkEntry::Span(FiberSpan::new(id, km, PowerLawNoiseModel::silent(true), loss).unwrap())
    }

    fn link108() -> LinkTopology {
        LinkTopology::new(
            vec![
                span("a", 43.0, 10.0),
                LinkEntry::Element(OpticalElement::standard_oadm("o1")),
                span("b", 11.0, 2.2),
                span("c", 11.0, 2.2),
                span("d", 43.0, 10.0),
            ],
            DEFAULT_CARRIER_HZ,
            2e-3,
        )
        .unwrap()
    }

    #[test]
    fn one_km_delay_is_five_microseconds() {
        let l = LinkTopology::single_span(
            FiberSpan::new("s", 1.0, PowerLawNoiseModel::silent(true), 0.2).unwrap(),
        )
        .unwrap();
        assert!((l.one_way_delay_s() - 5.0e-6).abs() < 1e-15);
    }

    #[test]
    fn span_108_km_delay() {
        let l = link108();
        assert!((l.one_way_delay_s() - 0.54e-3).abs() < 0.54e-5);
        let d43 = FiberSpan::new("x", 43.0, PowerLawNoiseModel::silent(true), 0.0).unwrap();
        assert!((d43.delay_s() - 0.215e-3).abs() < 1e-12);
    }

    #[test]
    fn build_link_errors() {
        assert!(build_link(&LinkConfig::default()).is_err());
        let neg = LinkConfig {
            entries: vec![EntryConfig {
                id: "s".into(),
                kind: "span".into(),
                length_km: Some(-1.0),
                ..Default::default()
            }],
            ..Default::default()
        };
        assert!(matches!(build_link(&neg), Err(Error::Link(m)) if m.contains("length_km")));
        let unknown = LinkConfig {
            entries: vec![
                EntryConfig {
                    id: "s".into(),
                    kind: "span".into(),
                    length_km: Some(1.0),
                    ..Default::default()
                },
                EntryConfig {
                    id: "w".into(),
                    kind: "wormhole".into(),
                    ..Default::default()
                },
            ],
            ..Default::default()
        };
        assert!(matches!(build_link(&unknown), Err(Error::Link(m)) if m.contains("unknown kind")));
    }

    #[test]
    fn lossless_link_has_zero_budget() {
        let l = LinkTopology::single_span(
            FiberSpan::new("s", 1.0, PowerLawNoiseModel::silent(true), 0.0).unwrap(),
        )
        .unwrap();
        let b = link_budget(&l);
        assert_eq!(b.total_one_way_loss_db, 0.0);
        assert_eq!(b.total_round_trip_loss_db, 0.0);
        assert!(b.warnings.is_empty());
    }

    #[test]
    fn two_milliwatts_to_35_microwatts() {
        let l = LinkTopology::new(
            vec![span("to_injection", 43.0, 17.6), span("rest", 11.0, 2.0)],
            DEFAULT_CARRIER_HZ,
            2e-3,
        )
        .unwrap();
        let b = link_budget(&l);
        let p = b.ledger[0].power_w;
        assert!((p - 35e-6).abs() < 0.5e-6, "{p}");
    }

    #[test]
    fn sensitivity_warning() {
        let l = LinkTopology::new(vec![span("s", 100.0, 60.0)], DEFAULT_CARRIER_HZ, 1e-3).unwrap();
        let b = link_budget(&l);
        assert!(b
            .warnings
            .iter()
            .any(|w| w.contains("heterodyne detection marginal")));
    }

    #[test]
    fn crosstalk_adjacent_and_other() {
        let l = link108();
        let adj = crosstalk_report(&l, 1e-3, 1).unwrap();
        assert!((adj.entries[0].leaked_w - 3.1623e-6).abs() < 1e-9);
        let other = crosstalk_report(&l, 1e-3, 10).unwrap();
        assert!((other.entries[0].leaked_w - 1e-7).abs() < 1e-15);
        let none = crosstalk_report(&l, 0.0, 1).unwrap();
        assert_eq!(none.entries[0].leaked_w, 0.0);
        assert!(none.entries[0].margin_db.is_infinite());
    }

    #[test]
    fn crosstalk_requires_oadm() {
        let l = LinkTopology::new(vec![span("s", 1.0, 0.2)], DEFAULT_CARRIER_HZ, 1e-3).unwrap();
        assert_eq!(crosstalk_report(&l, 1e-3, 1), Err(Error::NoOadm));
    }

    #[test]
    fn delays_along_link() {
        let l = link108();
        let d = propagation_delays(&l, &[0.0, 54.0, 108.0]).unwrap();
        assert_eq!(d[0].one_way_s, 0.0);
        assert!((d[1].one_way_s - 0.27e-3).abs() < 1e-12);
        assert!((d[2].one_way_s - 0.54e-3).abs() < 1e-12);
        assert!((d[0].outbound_beat_s - 1.08e-3).abs() < 1e-12);
        assert!(propagation_delays(&l, &[108.5]).is_err());
        assert!(propagation_delays(&l, &[-1.0]).is_err());
    }
}
