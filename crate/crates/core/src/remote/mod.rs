//! HTTP/JSON transport for the generator/denoiser interface.
//!
//! [`RemoteBackend`] is a [`Backend`](crate::backend::Backend) that forwards
//! every call to a server; [`serve`] exposes any in-process backend under the
//! same protocol.

mod client;
mod server;
mod wire;

pub use client::{RemoteBackend, RemoteConfig};
pub use server::{serve, ServerHandle, ServerOptions};
pub use wire::{
    BatchItemReply, BatchReply, BatchRequest, DenoiseBody, DenoiseReply, DescriptorReply,
    ErrorReply, GenerateBody, GenerateReply, WireTensor, PROTOCOL_VERSION,
};
