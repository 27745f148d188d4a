//! The backdoor-inspection-certificate server: accepts verified uploads from
//! inspectors, persists them durably, and answers lookups keyed by software
//! aggregate digest.

pub mod client;
pub mod http;
pub mod store;

pub use client::{CertServerClient, ClientError};
pub use http::{RunningServer, ServeError};
pub use store::{CertificateStore, PutOutcome, StoreError};
