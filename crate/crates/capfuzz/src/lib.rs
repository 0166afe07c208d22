//! Capture-driven attack injection.
//!
//! The pipeline runs in five stages: parse a classic pcap and decode TCP
//! segments ([`pcap`]), reassemble per-session byte streams and split them
//! into request/response messages ([`flow`]), type the fields of every client
//! request ([`field`]), expand each field into an ordered list of mutation
//! test cases ([`testcase`] and [`payload`]), then replay those cases against
//! a live target while a monitor agent watches for crashes and hangs
//! ([`inject`] and [`monitor`]) and fold the verdicts into a vulnerability
//! report ([`report`]).
//!
//! [`victim`] is a deliberately buggy FTP-subset server used as a known-good
//! target for end-to-end runs. The `capfuzz` binary wires the stages together
//! behind the `extract`, `generate`, `fuzz`, `report`, `monitor` and `victim`
//! subcommands.

pub mod config;
pub mod field;
pub mod flow;
pub mod inject;
pub mod monitor;
pub mod payload;
pub mod pcap;
pub mod report;
pub mod testcase;
pub mod util;
pub mod victim;
