//! Information services over heterogeneous sources.
//!
//! A service names a key-parameterized set of elements assembled from one
//! anchor source and any number of enrichment sources. This crate holds the
//! domain model and registry, the source connectors, the assembly engine,
//! the XML wire protocol and the workbook engine that binds spreadsheet
//! cells to services.

pub mod assembly;
pub mod connectors;
pub mod model;
pub mod protocol;
pub mod registry;
#[cfg(any(test, feature = "strategies"))]
pub mod strategies;
pub mod table;
pub mod value;
pub mod workbook;

pub use assembly::{resolve, ResolveError, ResolvedResult};
pub use connectors::{ConnectorError, Connectors, ExtractionRule, Params, Source, UpdateRow};
pub use model::{check_access, AccessControlList, Principal, ResourceDescriptor, ResourceKind, ServiceDefinition};
pub use registry::{load_registry, validate_service_definition, Registry, RegistryError, Violation};
pub use table::{Column, Table};
pub use value::{Number, Timestamp, Value, ValueType};
