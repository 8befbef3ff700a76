//! Simulated ACME-style domain validation. Each CA challenges the purported
//! owner to serve a random token at a well-known path, then checks the
//! domain from its own vantage point. The adversary model injects
//! compromised CAs (which attest without checking) and impersonated
//! validation paths (which fool exactly one CA's view of one domain).

use crate::group::{CaId, Element};
use crate::ledger::Address;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub const CHALLENGE_PATH_PREFIX: &str = "/.well-known/acme-challenge/";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("caller does not control {0} for this validation path")]
    NoControl(String),
    #[error("unknown domain {0}")]
    UnknownDomain(String),
    #[error("unknown challenge {0}")]
    UnknownChallenge(u64),
}

/// A web server under some requester's control.
#[derive(Debug, Clone)]
pub struct SimulatedDomain {
    pub name: String,
    pub owner: Address,
    pub key: Element,
    /// Content served to every vantage point.
    served_files: BTreeMap<String, Vec<u8>>,
    /// Per-CA overlays: what an impersonated validation path makes a single
    /// CA see, invisible to everyone else.
    overlays: BTreeMap<CaId, BTreeMap<String, Vec<u8>>>,
}

impl SimulatedDomain {
    pub fn new(name: impl Into<String>, owner: Address, key: Element) -> SimulatedDomain {
        SimulatedDomain {
            name: name.into(),
            owner,
            key,
            served_files: BTreeMap::new(),
            overlays: BTreeMap::new(),
        }
    }

    /// The content `ca` observes at `path`: its overlay first, the real
    /// server otherwise.
    fn view(&self, ca: &CaId, path: &str) -> Option<&[u8]> {
        if let Some(overlay) = self.overlays.get(ca) {
            if let Some(content) = overlay.get(path) {
                return Some(content);
            }
        }
        self.served_files.get(path).map(|v| v.as_slice())
    }
}

/// One CA's pending challenge against one domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Challenge {
    pub challenge_id: u64,
    pub ca_id: CaId,
    pub domain_name: String,
    pub path: String,
    pub expected_token: Vec<u8>,
    pub deadline_ms: u64,
}

/// Which CAs the adversary controls (i) and which validation paths it can
/// impersonate (j), all against one target domain.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pub target_domain: String,
    pub compromised_cas: BTreeSet<CaId>,
    pub impersonated_edges: BTreeSet<(CaId, String)>,
}

impl AdversaryConfig {
    /// Compromised CAs and impersonated CAs must be disjoint: i and j count
    /// different authorities.
    pub fn validate(&self) -> Result<(), &'static str> {
        for (ca, _) in &self.impersonated_edges {
            if self.compromised_cas.contains(ca) {
                return Err("a compromised CA cannot also be counted as impersonated");
            }
        }
        Ok(())
    }

    pub fn compromised_count(&self) -> usize {
        self.compromised_cas.len()
    }

    pub fn impersonated_count_for(&self, domain: &str) -> usize {
        self.impersonated_edges
            .iter()
            .filter(|(_, d)| d == domain)
            .count()
    }
}

/// The validation network: domains, pending challenges, and the adversary.
#[derive(Debug)]
pub struct ValidationNet {
    domains: BTreeMap<String, SimulatedDomain>,
    challenges: BTreeMap<u64, Challenge>,
    adversary: Option<AdversaryConfig>,
    token_rng: ChaCha20Rng,
    next_challenge_id: u64,
    /// Challenge lifetime in simulated milliseconds (two block intervals by
    /// default, so the fast path is typical and the slow path testable).
    pub challenge_ttl_ms: u64,
}

impl ValidationNet {
    pub fn new(seed: u64, challenge_ttl_ms: u64) -> ValidationNet {
        ValidationNet {
            domains: BTreeMap::new(),
            challenges: BTreeMap::new(),
            adversary: None,
            token_rng: ChaCha20Rng::seed_from_u64(seed ^ 0x746f6b656e), // "token"
            next_challenge_id: 0,
            challenge_ttl_ms,
        }
    }

    pub fn register_domain(&mut self, domain: SimulatedDomain) {
        self.domains.insert(domain.name.clone(), domain);
    }

    pub fn domain(&self, name: &str) -> Option<&SimulatedDomain> {
        self.domains.get(name)
    }

    pub fn set_adversary(&mut self, adversary: AdversaryConfig) -> Result<(), &'static str> {
        adversary.validate()?;
        self.adversary = Some(adversary);
        Ok(())
    }

    pub fn adversary(&self) -> Option<&AdversaryConfig> {
        self.adversary.as_ref()
    }

    /// A fresh challenge from `ca` against `domain_name`, recorded pending.
    pub fn issue_challenge(&mut self, ca: &CaId, domain_name: &str, now_ms: u64) -> Challenge {
        let mut token = vec![0u8; 32];
        self.token_rng.fill_bytes(&mut token);
        let challenge_id = self.next_challenge_id;
        self.next_challenge_id += 1;
        let challenge = Challenge {
            challenge_id,
            ca_id: ca.clone(),
            domain_name: domain_name.to_string(),
            path: format!("{CHALLENGE_PATH_PREFIX}{challenge_id}"),
            expected_token: token,
            deadline_ms: now_ms + self.challenge_ttl_ms,
        };
        self.challenges.insert(challenge_id, challenge.clone());
        challenge
    }

    /// Serves the token. The legitimate owner publishes it for every vantage
    /// point; an adversary holding the matching impersonated edge plants it
    /// in that single CA's view only.
    pub fn complete_challenge(
        &mut self,
        actor: Address,
        challenge: &Challenge,
    ) -> Result<(), ValidationError> {
        let is_owner = self
            .domains
            .get(&challenge.domain_name)
            .ok_or_else(|| ValidationError::UnknownDomain(challenge.domain_name.clone()))?
            .owner
            == actor;
        if is_owner {
            let domain = self.domains.get_mut(&challenge.domain_name).unwrap();
            domain
                .served_files
                .insert(challenge.path.clone(), challenge.expected_token.clone());
            return Ok(());
        }
        let has_edge = self.adversary.as_ref().is_some_and(|adv| {
            adv.impersonated_edges
                .contains(&(challenge.ca_id.clone(), challenge.domain_name.clone()))
        });
        if has_edge {
            let domain = self.domains.get_mut(&challenge.domain_name).unwrap();
            domain
                .overlays
                .entry(challenge.ca_id.clone())
                .or_default()
                .insert(challenge.path.clone(), challenge.expected_token.clone());
            return Ok(());
        }
        Err(ValidationError::NoControl(challenge.domain_name.clone()))
    }

    /// The CA's verdict: does its view of the domain serve the token before
    /// the deadline? A compromised CA attests the adversary's target no
    /// matter what.
    pub fn check_challenge(&self, ca: &CaId, challenge: &Challenge, now_ms: u64) -> bool {
        if let Some(adv) = &self.adversary {
            if adv.compromised_cas.contains(ca) && adv.target_domain == challenge.domain_name {
                return true;
            }
        }
        if now_ms > challenge.deadline_ms {
            return false;
        }
        match self.domains.get(&challenge.domain_name) {
            Some(domain) => domain.view(ca, &challenge.path) == Some(&challenge.expected_token[..]),
            None => false,
        }
    }
}
