//! CAN 2.0A joint command/feedback codec and bus timing analysis.
//!
//! Identifiers carry a 6-bit node id (up to 64 devices) in the low bits and a
//! function code above it: `0x040 | node` for commands from the host and
//! `0x080 | node` for feedback from an actuator. Lower ids win arbitration, so
//! commands always preempt feedback.
//!
//! Command payload (8 bytes, big-endian, MSB first):
//!
//! ```text
//! byte  0    1    2    3         4    5    6         7
//!       pos[15:0] vel[11:4] vel[3:0]|kp[11:8] kp[7:0] kd[11:4] kd[3:0]|tau[11:8] tau[7:0]
//! ```
//!
//! Feedback payload (6 bytes): node id, then position (16 bit), velocity and
//! torque (12 bit each) packed the same way.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::actuator::{ControlCommand, ControlMode};
use crate::{Error, Result};

pub const MAX_NODES: usize = 64;
pub const COMMAND_BASE: u16 = 0x040;
pub const FEEDBACK_BASE: u16 = 0x080;
pub const COMMAND_DLC: u8 = 8;
pub const FEEDBACK_DLC: u8 = 6;
pub const DEFAULT_BITRATE: f64 = 1_000_000.0;
pub const DEFAULT_CYCLE_RATE: f64 = 250.0;
pub const DEFAULT_FRAMES_PER_DEVICE: u32 = 2;

/// Bits covered by the stuffing rule for a data frame: SOF, identifier,
/// RTR, IDE, r0, DLC, data and CRC.
pub fn stuffable_bits(dlc: u8) -> u32 {
    34 + 8 * dlc as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanFrame {
    id: u16,
    dlc: u8,
    data: [u8; 8],
}

impl CanFrame {
    pub fn new(id: u16, payload: &[u8]) -> Result<Self> {
        if id >= 0x800 {
            return Err(Error::arg(format!("CAN id {id:#x} exceeds 11 bits")));
        }
        if payload.len() > 8 {
            return Err(Error::arg(format!(
                "CAN payload of {} bytes exceeds 8",
                payload.len()
            )));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(CanFrame {
            id,
            dlc: payload.len() as u8,
            data,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn payload(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }

    /// Lowercase space-separated hex of the payload, as used by the golden files.
    pub fn payload_hex(&self) -> String {
        self.payload()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Parses `"80 00 ..."`; whitespace between bytes is optional.
    pub fn from_hex(id: u16, hex_bytes: &str) -> Result<Self> {
        let compact: String = hex_bytes.split_whitespace().collect();
        let bytes =
            hex::decode(&compact).map_err(|e| Error::arg(format!("bad hex `{hex_bytes}`: {e}")))?;
        CanFrame::new(id, &bytes)
    }

    /// Unstuffed bit sequence from SOF through the end of the CRC.
    pub fn stuffable_bitstream(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(stuffable_bits(self.dlc) as usize);
        bits.push(false); // SOF
        push_bits(&mut bits, self.id as u64, 11);
        bits.extend([false, false, false]); // RTR, IDE, r0
        push_bits(&mut bits, self.dlc as u64, 4);
        for &byte in self.payload() {
            push_bits(&mut bits, byte as u64, 8);
        }
        let crc = crc15(&bits);
        push_bits(&mut bits, crc as u64, 15);
        bits
    }
}

fn push_bits(bits: &mut Vec<bool>, value: u64, width: u32) {
    for i in (0..width).rev() {
        bits.push((value >> i) & 1 == 1);
    }
}

/// CAN CRC-15 (polynomial 0x4599) over a bit sequence.
pub fn crc15(bits: &[bool]) -> u16 {
    let mut crc: u16 = 0;
    for &bit in bits {
        let next = bit ^ ((crc >> 14) & 1 == 1);
        crc = (crc << 1) & 0x7fff;
        if next {
            crc ^= 0x4599;
        }
    }
    crc
}

/// Inserts a complementary bit after every run of five identical bits.
pub fn stuff(bits: &[bool]) -> Vec<bool> {
    let mut out = Vec::with_capacity(bits.len() + bits.len() / 4);
    let mut run = 0;
    let mut last = None;
    for &b in bits {
        out.push(b);
        if Some(b) == last {
            run += 1;
        } else {
            run = 1;
            last = Some(b);
        }
        if run == 5 {
            out.push(!b);
            last = Some(!b);
            run = 1;
        }
    }
    out
}

/// Inverse of [`stuff`]. Errors on a stuffing violation (six equal bits).
pub fn destuff(bits: &[bool]) -> Result<Vec<bool>> {
    let mut out = Vec::with_capacity(bits.len());
    let mut run = 0;
    let mut last = None;
    let mut skip = false;
    for &b in bits {
        if skip {
            if Some(b) == last {
                return Err(Error::arg("stuffing violation"));
            }
            skip = false;
            last = Some(b);
            run = 1;
            continue;
        }
        out.push(b);
        if Some(b) == last {
            run += 1;
        } else {
            run = 1;
            last = Some(b);
        }
        if run == 5 {
            skip = true;
        }
    }
    Ok(out)
}

pub fn stuff_bit_count(bits: &[bool]) -> u32 {
    (stuff(bits).len() - bits.len()) as u32
}

pub fn worst_case_stuff_bits(dlc: u8) -> u32 {
    (stuffable_bits(dlc) - 1) / 4
}

/// Frame length on the wire including the 3-bit interframe space.
/// With `worst_case_stuffing` the analytic upper bound on stuff bits is added;
/// otherwise the length is unstuffed.
pub fn frame_bit_length(frame: &CanFrame, worst_case_stuffing: bool) -> u32 {
    let base = 47 + 8 * frame.dlc as u32;
    if worst_case_stuffing {
        base + worst_case_stuff_bits(frame.dlc)
    } else {
        base
    }
}

/// Frame length with the stuff bits this particular frame actually needs.
pub fn stuffed_bit_length(frame: &CanFrame) -> u32 {
    frame_bit_length(frame, false) + stuff_bit_count(&frame.stuffable_bitstream())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub min: f64,
    pub max: f64,
    pub bits: u32,
}

impl FieldRange {
    pub const fn new(min: f64, max: f64, bits: u32) -> Self {
        FieldRange { min, max, bits }
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    pub fn step(&self) -> f64 {
        (self.max - self.min) / self.max_code() as f64
    }

    /// Quantizes to the nearest code, clamping out-of-range input.
    /// Returns the code and whether clamping happened.
    pub fn encode(&self, x: f64) -> (u32, bool) {
        let clamped = x < self.min || x > self.max || x.is_nan();
        let x = if x.is_nan() { self.min } else { x.clamp(self.min, self.max) };
        let code = ((x - self.min) / (self.max - self.min) * self.max_code() as f64 + 0.5).floor();
        (code.min(self.max_code() as f64) as u32, clamped)
    }

    pub fn decode(&self, code: u32) -> f64 {
        self.min + code as f64 * self.step()
    }
}

/// Field ranges of the joint wire format. Only the torque range depends on
/// the actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointWire {
    pub position: FieldRange,
    pub velocity: FieldRange,
    pub kp: FieldRange,
    pub kd: FieldRange,
    pub torque: FieldRange,
}

impl JointWire {
    pub fn new(torque_max: f64) -> Self {
        JointWire {
            position: FieldRange::new(-4.0 * PI, 4.0 * PI, 16),
            velocity: FieldRange::new(-30.0, 30.0, 12),
            kp: FieldRange::new(0.0, 500.0, 12),
            kd: FieldRange::new(0.0, 5.0, 12),
            torque: FieldRange::new(-torque_max, torque_max, 12),
        }
    }
}

/// Raw MIT-style command fields as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointCommand {
    pub position: f64,
    pub velocity: f64,
    pub kp: f64,
    pub kd: f64,
    pub torque: f64,
}

impl JointCommand {
    pub fn from_control(cmd: &ControlCommand) -> Self {
        match cmd.mode {
            ControlMode::Position => JointCommand {
                position: cmd.setpoint,
                velocity: 0.0,
                kp: cmd.kp,
                kd: cmd.kd,
                torque: cmd.tau_ff,
            },
            ControlMode::Velocity => JointCommand {
                position: 0.0,
                velocity: cmd.setpoint,
                kp: 0.0,
                kd: cmd.kd,
                torque: cmd.tau_ff,
            },
            ControlMode::Torque => JointCommand {
                torque: cmd.setpoint + cmd.tau_ff,
                ..Default::default()
            },
        }
    }

    /// Maps back onto a control command: position mode when kp > 0, velocity
    /// mode when only kd > 0, torque mode otherwise.
    ///
    /// A nonzero velocity reference combined with kp > 0 has no counterpart in
    /// [`ControlCommand`] and is dropped.
    pub fn to_control(&self) -> ControlCommand {
        if self.kp > 0.0 {
            ControlCommand {
                mode: ControlMode::Position,
                setpoint: self.position,
                kp: self.kp,
                kd: self.kd,
                tau_ff: self.torque,
            }
        } else if self.kd > 0.0 {
            ControlCommand {
                mode: ControlMode::Velocity,
                setpoint: self.velocity,
                kp: 0.0,
                kd: self.kd,
                tau_ff: self.torque,
            }
        } else {
            ControlCommand::torque(self.torque)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClampFlags {
    pub position: bool,
    pub velocity: bool,
    pub kp: bool,
    pub kd: bool,
    pub torque: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.position || self.velocity || self.kp || self.kd || self.torque
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodedCommand {
    pub frame: CanFrame,
    pub clamped: ClampFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointFeedback {
    pub position: f64,
    pub velocity: f64,
    pub torque: f64,
}

fn check_node(node: u8) -> Result<()> {
    if node as usize >= MAX_NODES {
        return Err(Error::arg(format!("node id {node} exceeds {}", MAX_NODES - 1)));
    }
    Ok(())
}

pub fn command_id(node: u8) -> u16 {
    COMMAND_BASE | (node as u16 & 0x3f)
}

pub fn feedback_id(node: u8) -> u16 {
    FEEDBACK_BASE | (node as u16 & 0x3f)
}

pub fn encode_command(node: u8, cmd: &ControlCommand, wire: &JointWire) -> Result<EncodedCommand> {
    check_node(node)?;
    Ok(encode_joint_command(node, &JointCommand::from_control(cmd), wire))
}

pub fn encode_joint_command(node: u8, cmd: &JointCommand, wire: &JointWire) -> EncodedCommand {
    let (p, cp) = wire.position.encode(cmd.position);
    let (v, cv) = wire.velocity.encode(cmd.velocity);
    let (kp, ckp) = wire.kp.encode(cmd.kp);
    let (kd, ckd) = wire.kd.encode(cmd.kd);
    let (t, ct) = wire.torque.encode(cmd.torque);
    let data = [
        (p >> 8) as u8,
        p as u8,
        (v >> 4) as u8,
        (((v & 0xf) << 4) | (kp >> 8)) as u8,
        kp as u8,
        (kd >> 4) as u8,
        (((kd & 0xf) << 4) | (t >> 8)) as u8,
        t as u8,
    ];
    EncodedCommand {
        frame: CanFrame {
            id: command_id(node & 0x3f),
            dlc: COMMAND_DLC,
            data,
        },
        clamped: ClampFlags {
            position: cp,
            velocity: cv,
            kp: ckp,
            kd: ckd,
            torque: ct,
        },
    }
}

fn decode_error(frame: &CanFrame, reason: impl Into<String>) -> Error {
    Error::Decode {
        id: frame.id,
        dlc: frame.dlc,
        reason: reason.into(),
    }
}

/// Returns the addressed node and the decoded command fields.
pub fn decode_command(frame: &CanFrame, wire: &JointWire) -> Result<(u8, JointCommand)> {
    if frame.id & !0x3f != COMMAND_BASE {
        return Err(decode_error(frame, "not a command id"));
    }
    if frame.dlc != COMMAND_DLC {
        return Err(decode_error(frame, format!("expected dlc {COMMAND_DLC}")));
    }
    let d = &frame.data;
    let p = (d[0] as u32) << 8 | d[1] as u32;
    let v = (d[2] as u32) << 4 | (d[3] as u32) >> 4;
    let kp = (d[3] as u32 & 0xf) << 8 | d[4] as u32;
    let kd = (d[5] as u32) << 4 | (d[6] as u32) >> 4;
    let t = (d[6] as u32 & 0xf) << 8 | d[7] as u32;
    Ok((
        (frame.id & 0x3f) as u8,
        JointCommand {
            position: wire.position.decode(p),
            velocity: wire.velocity.decode(v),
            kp: wire.kp.decode(kp),
            kd: wire.kd.decode(kd),
            torque: wire.torque.decode(t),
        },
    ))
}

pub fn encode_feedback(node: u8, fb: &JointFeedback, wire: &JointWire) -> Result<(CanFrame, ClampFlags)> {
    check_node(node)?;
    let (p, cp) = wire.position.encode(fb.position);
    let (v, cv) = wire.velocity.encode(fb.velocity);
    let (t, ct) = wire.torque.encode(fb.torque);
    let payload = [
        node,
        (p >> 8) as u8,
        p as u8,
        (v >> 4) as u8,
        (((v & 0xf) << 4) | (t >> 8)) as u8,
        t as u8,
    ];
    let frame = CanFrame::new(feedback_id(node), &payload)?;
    Ok((
        frame,
        ClampFlags {
            position: cp,
            velocity: cv,
            torque: ct,
            ..Default::default()
        },
    ))
}

/// Decodes a feedback frame into the sending node and its joint state.
pub fn decode_feedback(frame: &CanFrame, wire: &JointWire) -> Result<(u8, JointFeedback)> {
    if frame.id & !0x3f != FEEDBACK_BASE {
        return Err(decode_error(frame, "unknown id for feedback"));
    }
    if frame.dlc != FEEDBACK_DLC {
        return Err(decode_error(frame, format!("expected dlc {FEEDBACK_DLC}")));
    }
    let d = &frame.data;
    let node = (frame.id & 0x3f) as u8;
    if d[0] != node {
        return Err(decode_error(
            frame,
            format!("payload node {} does not match id", d[0]),
        ));
    }
    let p = (d[1] as u32) << 8 | d[2] as u32;
    let v = (d[3] as u32) << 4 | (d[4] as u32) >> 4;
    let t = (d[4] as u32 & 0xf) << 8 | d[5] as u32;
    Ok((
        node,
        JointFeedback {
            position: wire.position.decode(p),
            velocity: wire.velocity.decode(v),
            torque: wire.torque.decode(t),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusConfig {
    #[serde(default = "default_bus_name")]
    pub name: String,
    #[serde(default = "default_bitrate")]
    pub bitrate: f64,
    pub devices: Vec<u8>,
    #[serde(default = "default_cycle_rate")]
    pub cycle_rate_hz: f64,
    #[serde(default = "default_frames")]
    pub frames_per_device: u32,
}

fn default_bus_name() -> String {
    "can0".into()
}
fn default_bitrate() -> f64 {
    DEFAULT_BITRATE
}
fn default_cycle_rate() -> f64 {
    DEFAULT_CYCLE_RATE
}
fn default_frames() -> u32 {
    DEFAULT_FRAMES_PER_DEVICE
}

impl BusConfig {
    pub fn new(name: impl Into<String>, devices: Vec<u8>) -> Self {
        BusConfig {
            name: name.into(),
            bitrate: DEFAULT_BITRATE,
            devices,
            cycle_rate_hz: DEFAULT_CYCLE_RATE,
            frames_per_device: DEFAULT_FRAMES_PER_DEVICE,
        }
    }

    /// Devices numbered `0..n`.
    pub fn with_device_count(n: usize) -> Result<Self> {
        if n > MAX_NODES {
            return Err(Error::config(format!("{n} devices exceed the {MAX_NODES}-node limit")));
        }
        Ok(BusConfig::new("can0", (0..n as u8).collect()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bitrate > 0.0 && self.bitrate.is_finite()) {
            return Err(Error::config(format!("bus `{}`: bitrate must be positive", self.name)));
        }
        if !(self.cycle_rate_hz > 0.0 && self.cycle_rate_hz.is_finite()) {
            return Err(Error::config(format!("bus `{}`: cycle rate must be positive", self.name)));
        }
        if self.devices.len() > MAX_NODES {
            return Err(Error::config(format!(
                "bus `{}`: {} devices exceed the {MAX_NODES}-node limit",
                self.name,
                self.devices.len()
            )));
        }
        let mut seen = [false; MAX_NODES];
        for &d in &self.devices {
            if d as usize >= MAX_NODES {
                return Err(Error::config(format!("bus `{}`: node id {d} out of range", self.name)));
            }
            if std::mem::replace(&mut seen[d as usize], true) {
                return Err(Error::config(format!("bus `{}`: duplicate node id {d}", self.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub utilization: f64,
    pub feasible: bool,
    /// Idle time left per cycle, seconds. Negative when infeasible.
    pub slack_s: f64,
    pub bits_per_cycle: u64,
}

/// Worst-case bus load, counting every frame as a stuffed 8-byte data frame.
pub fn cycle_feasibility(bus: &BusConfig) -> Feasibility {
    let per_frame = 47 + 8 * 8 + worst_case_stuff_bits(8) as u64;
    let bits = bus.devices.len() as u64 * bus.frames_per_device as u64 * per_frame;
    let utilization = bits as f64 * bus.cycle_rate_hz / bus.bitrate;
    Feasibility {
        utilization,
        feasible: utilization < 1.0,
        slack_s: 1.0 / bus.cycle_rate_hz - bits as f64 / bus.bitrate,
        bits_per_cycle: bits,
    }
}

pub fn require_feasible(bus: &BusConfig) -> Result<Feasibility> {
    let f = cycle_feasibility(bus);
    if !f.feasible {
        return Err(Error::BusInfeasible {
            bus: bus.name.clone(),
            rate_hz: bus.cycle_rate_hz,
            utilization: f.utilization,
        });
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub id: u16,
    pub start_s: f64,
    pub end_s: f64,
    pub bits: u32,
}

/// Sends a batch of frames that all become ready at t = 0. Whenever the bus
/// is idle the pending frame with the lowest id wins arbitration; ties keep
/// submission order. Each frame occupies its actually stuffed length.
pub fn simulate_cycle(bitrate: f64, frames: &[CanFrame]) -> Vec<FrameTiming> {
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| (frames[i].id, i));
    let mut t_bits: u64 = 0;
    order
        .into_iter()
        .map(|i| {
            let bits = stuffed_bit_length(&frames[i]);
            let start = t_bits;
            t_bits += bits as u64;
            FrameTiming {
                id: frames[i].id,
                start_s: start as f64 / bitrate,
                end_s: t_bits as f64 / bitrate,
                bits,
            }
        })
        .collect()
}
