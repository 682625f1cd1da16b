//! A miniature data-commons platform: dictionary-driven graph submission,
//! object indexing, metadata, authorization, ETL search and a query engine.

pub mod authz;
pub mod canon;
pub mod cli;
pub mod commons;
pub mod dictionary;
pub mod error;
pub mod etlsearch;
pub mod gateway;
pub mod graphstore;
pub mod metastore;
pub mod objectindex;
pub mod queryengine;

pub use error::{Error, Result};
