//! Sensor network to cloud testbed: XBee-style API frame codec, ADC and
//! divider conversions, a battery lifetime model, a discrete-event simulator
//! of a polled sensing layer, and an in-memory feed service with an HTTP
//! front end.

pub mod cloud;
pub mod frame_codec;
pub mod netsim;
pub mod power;
pub mod units;
