use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use anyhow::anyhow;
use gsedit_core::fixtures::{fixture, FixtureName};
use gsedit_core::guidance::{GuidanceProvider, RemoteProvider};

/// Where guidance comes from: `mock:<fixture>` or `remote:<url>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Mock(FixtureName),
    Remote(String),
}

impl FromStr for ProviderSpec {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("mock", name)) => Ok(Self::Mock(name.parse().map_err(|e: String| anyhow!(e))?)),
            Some(("remote", url)) if !url.is_empty() => Ok(Self::Remote(url.to_string())),
            _ => Err(anyhow!("provider {s:?} is not mock:<fixture> or remote:<url>")),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock(name) => write!(f, "mock:{name}"),
            Self::Remote(url) => write!(f, "remote:{url}"),
        }
    }
}

impl ProviderSpec {
    /// The mock uses `seed` for both its fixture and its noise.
    pub fn build(&self, seed: u64, timeout: Duration) -> anyhow::Result<Box<dyn GuidanceProvider>> {
        Ok(match self {
            Self::Mock(name) => Box::new(fixture(*name, seed).mock_provider(seed)),
            Self::Remote(url) => Box::new(RemoteProvider::new(url, timeout)?),
        })
    }
}
