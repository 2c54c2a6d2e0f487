//! Simulated vertical federation.
//!
//! Roles:
//!
//! - **Party**: holds one feature block for every instance, keyed by an opaque
//!   token, plus its block of the reference (median) vector. Answers
//!   `resolve_request`s; a special ID is always answered with the reference
//!   block.
//! - **Prediction host**: owns the centrally trained model, collects blocks
//!   from the parties and evaluates the assembled vector.
//! - **Evaluator**: measures contributions. It sends on/off masks and instance
//!   tokens to the host and only ever receives scalar predictions.
//!
//! A party's whole block acts as one federated feature while the other
//! parties' features stay individual players; the Monte-Carlo permutation
//! estimator then runs over that reduced player set.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, VerticalPartition};
use crate::error::{FedError, Result};
use crate::model::Predictor;
use crate::seed;
use crate::shapley::{coalition_weights, permutation_estimate, FeatureValue, ENUMERATION_CAP};

pub type PartyId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceRef {
    RealId { token: String },
    SpecialId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    ResolveRequest,
    ResolveResponse,
    PredictRequest,
    PredictResponse,
}

/// Wire record exchanged between roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationMessage {
    pub kind: MessageKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_ref: Option<InstanceRef>,
    /// On/off status per feature; local to the receiving party for
    /// `resolve_request`, over all features for `predict_request`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<f64>,
}

impl FederationMessage {
    fn new(kind: MessageKind) -> Self {
        Self {
            kind,
            instance_ref: None,
            mask: None,
            payload: None,
            prediction: None,
        }
    }

    pub fn resolve_request(instance_ref: InstanceRef, mask: Option<Vec<bool>>) -> Self {
        Self {
            instance_ref: Some(instance_ref),
            mask,
            ..Self::new(MessageKind::ResolveRequest)
        }
    }

    pub fn resolve_response(payload: Vec<f64>) -> Self {
        Self {
            payload: Some(payload),
            ..Self::new(MessageKind::ResolveResponse)
        }
    }

    pub fn predict_request(token: &str, mask: Vec<bool>) -> Self {
        Self {
            instance_ref: Some(InstanceRef::RealId {
                token: token.to_string(),
            }),
            mask: Some(mask),
            ..Self::new(MessageKind::PredictRequest)
        }
    }

    pub fn predict_response(prediction: f64) -> Self {
        Self {
            prediction: Some(prediction),
            ..Self::new(MessageKind::PredictResponse)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Evaluator,
    Host,
    Party(PartyId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub index: usize,
    pub from: Role,
    pub to: Role,
    pub message: FederationMessage,
}

pub fn write_transcript(entries: &[TranscriptEntry], mut out: impl Write) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|source| FedError::Io {
            path: "<transcript>".into(),
            source,
        })?;
    }
    Ok(())
}

pub fn read_transcript(input: impl BufRead) -> Result<Vec<TranscriptEntry>> {
    let mut entries = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|source| FedError::Io {
            path: "<transcript>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line)?);
    }
    Ok(entries)
}

/// A data holder in the federation.
#[derive(Debug, Clone)]
pub struct Party {
    id: PartyId,
    feature_indices: Vec<usize>,
    store: HashMap<String, Vec<f64>>,
    reference_block: Vec<f64>,
}

impl Party {
    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn feature_indices(&self) -> &[usize] {
        &self.feature_indices
    }

    pub fn store_len(&self) -> usize {
        self.store.len()
    }

    pub fn handle(&self, msg: &FederationMessage) -> Result<FederationMessage> {
        if msg.kind != MessageKind::ResolveRequest {
            return Err(FedError::InvalidArgument(format!(
                "party {} cannot handle {:?}",
                self.id, msg.kind
            )));
        }
        match &msg.instance_ref {
            Some(InstanceRef::SpecialId) => Ok(FederationMessage::resolve_response(
                self.reference_block.clone(),
            )),
            Some(InstanceRef::RealId { token }) => {
                let block = self.store.get(token).ok_or(FedError::UnknownInstance)?;
                let payload = match &msg.mask {
                    None => block.clone(),
                    Some(mask) => {
                        if mask.len() != block.len() {
                            return Err(FedError::DimensionMismatch {
                                expected: block.len(),
                                found: mask.len(),
                            });
                        }
                        block
                            .iter()
                            .zip(&self.reference_block)
                            .zip(mask)
                            .map(|((&v, &r), &on)| if on { v } else { r })
                            .collect()
                    }
                };
                Ok(FederationMessage::resolve_response(payload))
            }
            None => Err(FedError::UnknownInstance),
        }
    }
}

/// Parties, tokens and the prediction host's model.
pub struct Federation {
    parties: Vec<Party>,
    d: usize,
    tokens: Vec<String>,
    model: Option<Box<dyn Predictor + Send>>,
}

/// Hands each party its feature block and reference block. Instance tokens
/// are random hex strings drawn from `token_seed`, shared by all parties.
pub fn assemble_federation(
    data: &Dataset,
    partition: &VerticalPartition,
    token_seed: u64,
) -> Result<Federation> {
    let partition = VerticalPartition::new(partition.groups.clone(), data.d())?;
    let mut rng = seed::rng(token_seed);
    let mut tokens: Vec<String> = Vec::with_capacity(data.n());
    let mut seen = std::collections::HashSet::new();
    while tokens.len() < data.n() {
        let t = format!("{:016x}{:016x}", rng.gen::<u64>(), rng.gen::<u64>());
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    }
    let medians = data.medians();
    let parties = partition
        .groups
        .iter()
        .enumerate()
        .map(|(id, features)| Party {
            id,
            feature_indices: features.clone(),
            store: tokens
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    (
                        t.clone(),
                        features.iter().map(|&j| data.row(i)[j]).collect(),
                    )
                })
                .collect(),
            reference_block: features.iter().map(|&j| medians[j]).collect(),
        })
        .collect();
    Ok(Federation {
        parties,
        d: data.d(),
        tokens,
        model: None,
    })
}

impl Federation {
    pub fn register_model(&mut self, model: impl Predictor + Send + 'static) -> Result<()> {
        if model.dim() != self.d {
            return Err(FedError::DimensionMismatch {
                expected: self.d,
                found: model.dim(),
            });
        }
        self.model = Some(Box::new(model));
        Ok(())
    }

    pub fn parties(&self) -> &[Party] {
        &self.parties
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn instance_count(&self) -> usize {
        self.tokens.len()
    }

    /// Opaque reference for dataset row `instance`.
    pub fn token(&self, instance: usize) -> Result<&str> {
        self.tokens
            .get(instance)
            .map(String::as_str)
            .ok_or(FedError::UnknownInstance)
    }

    pub fn session(&self, capture: bool) -> Session<'_> {
        Session {
            fed: self,
            capture,
            transcript: Vec::new(),
            message_count: 0,
        }
    }
}

/// One evaluator run with its own transcript.
pub struct Session<'a> {
    fed: &'a Federation,
    capture: bool,
    transcript: Vec<TranscriptEntry>,
    message_count: usize,
}

impl<'a> Session<'a> {
    fn record(&mut self, from: Role, to: Role, message: &FederationMessage) {
        if self.capture {
            self.transcript.push(TranscriptEntry {
                index: self.message_count,
                from,
                to,
                message: message.clone(),
            });
        }
        self.message_count += 1;
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn into_transcript(self) -> Vec<TranscriptEntry> {
        self.transcript
    }

    pub fn message_count(&self) -> usize {
        self.message_count
    }

    /// Evaluator asks the host for a prediction on the instance behind
    /// `token`, with features switched on per `mask`; switched-off features
    /// take reference values. Only the scalar comes back.
    pub fn federated_predict(&mut self, token: &str, mask: &[bool]) -> Result<f64> {
        if mask.len() != self.fed.d {
            return Err(FedError::DimensionMismatch {
                expected: self.fed.d,
                found: mask.len(),
            });
        }
        let request = FederationMessage::predict_request(token, mask.to_vec());
        self.record(Role::Evaluator, Role::Host, &request);
        let response = self.host_handle(&request)?;
        self.record(Role::Host, Role::Evaluator, &response);
        response
            .prediction
            .ok_or_else(|| FedError::Numeric("host returned no prediction".into()))
    }

    fn host_handle(&mut self, request: &FederationMessage) -> Result<FederationMessage> {
        let fed = self.fed;
        let model = fed.model.as_ref().ok_or(FedError::UnregisteredModel)?;
        let token = match &request.instance_ref {
            Some(InstanceRef::RealId { token }) => token.clone(),
            _ => return Err(FedError::UnknownInstance),
        };
        let mask = request.mask.as_deref().unwrap_or(&[]);
        let mut assembled = vec![0.0; fed.d];
        for party in &fed.parties {
            let local: Vec<bool> = party.feature_indices.iter().map(|&j| mask[j]).collect();
            let msg = if local.iter().all(|&on| !on) {
                FederationMessage::resolve_request(InstanceRef::SpecialId, None)
            } else {
                let mask = if local.iter().all(|&on| on) {
                    None
                } else {
                    Some(local)
                };
                FederationMessage::resolve_request(
                    InstanceRef::RealId {
                        token: token.clone(),
                    },
                    mask,
                )
            };
            self.record(Role::Host, Role::Party(party.id), &msg);
            let reply = party.handle(&msg)?;
            self.record(Role::Party(party.id), Role::Host, &reply);
            let block = reply.payload.unwrap_or_default();
            for (&j, v) in party.feature_indices.iter().zip(block) {
                assembled[j] = v;
            }
        }
        Ok(FederationMessage::predict_response(
            model.predict_unchecked(&assembled),
        ))
    }

    /// Non-compliant evaluator behaviour: asks a party for its raw block
    /// directly. Exists so the audit has something to catch.
    pub fn request_raw_block(&mut self, party: PartyId, token: &str) -> Result<Vec<f64>> {
        let p = self
            .fed
            .parties
            .get(party)
            .ok_or(FedError::IndexOutOfRange {
                index: party,
                size: self.fed.parties.len(),
            })?;
        let msg = FederationMessage::resolve_request(
            InstanceRef::RealId {
                token: token.to_string(),
            },
            None,
        );
        self.record(Role::Evaluator, Role::Party(party), &msg);
        let reply = p.handle(&msg)?;
        self.record(Role::Party(party), Role::Evaluator, &reply);
        Ok(reply.payload.unwrap_or_default())
    }
}

/// Players of the reduced game: the target party's block as one federated
/// unit plus every other feature on its own, ordered by lowest feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSpace {
    pub units: Vec<Vec<usize>>,
    pub target: Option<usize>,
    d: usize,
}

impl ReducedSpace {
    pub fn for_party(fed: &Federation, party: PartyId) -> Result<Self> {
        let group = fed
            .parties
            .get(party)
            .ok_or(FedError::IndexOutOfRange {
                index: party,
                size: fed.parties.len(),
            })?
            .feature_indices
            .clone();
        let mut units: Vec<Vec<usize>> = (0..fed.d)
            .filter(|j| !group.contains(j))
            .map(|j| vec![j])
            .collect();
        units.push(group.clone());
        units.sort_by_key(|u| u.iter().copied().min());
        let target = units.iter().position(|u| *u == group);
        Ok(Self {
            units,
            target,
            d: fed.d,
        })
    }

    /// Every party is a single unit.
    pub fn all_parties(fed: &Federation) -> Self {
        Self {
            units: fed
                .parties
                .iter()
                .map(|p| p.feature_indices.clone())
                .collect(),
            target: None,
            d: fed.d,
        }
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Feature-level mask for a unit-level coalition.
    pub fn expand(&self, on: &[bool]) -> Vec<bool> {
        let mut mask = vec![false; self.d];
        for (unit, &u_on) in self.units.iter().zip(on) {
            if u_on {
                for &j in unit {
                    mask[j] = true;
                }
            }
        }
        mask
    }
}

/// MC Shapley value of `unit` in `space`, evaluated through the protocol.
pub fn unit_shapley_mc(
    session: &mut Session<'_>,
    space: &ReducedSpace,
    token: &str,
    unit: usize,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    permutation_estimate(space.len(), unit, iterations, None, seed, |on, _| {
        session.federated_predict(token, &space.expand(on))
    })
}

/// Exact Shapley values of every unit in `space` through the protocol.
pub fn unit_shapley_exact(
    session: &mut Session<'_>,
    space: &ReducedSpace,
    token: &str,
) -> Result<Vec<f64>> {
    let p = space.len();
    if p > ENUMERATION_CAP {
        return Err(FedError::EnumerationCap {
            d: p,
            cap: ENUMERATION_CAP,
        });
    }
    let mut table = Vec::with_capacity(1 << p);
    let mut on = vec![false; p];
    for mask in 0..1usize << p {
        for (u, slot) in on.iter_mut().enumerate() {
            *slot = mask >> u & 1 == 1;
        }
        table.push(session.federated_predict(token, &space.expand(&on))?);
    }
    let w = coalition_weights(p);
    Ok((0..p)
        .map(|i| {
            let bit = 1usize << i;
            (0..table.len())
                .filter(|m| m & bit == 0)
                .map(|m| w[m.count_ones() as usize] * (table[m | bit] - table[m]))
                .sum()
        })
        .collect())
}

/// Contribution of one party for one instance: the MC Shapley value of its
/// federated feature, seeded directly by `seed`.
pub fn federated_party_shapley(
    session: &mut Session<'_>,
    token: &str,
    party: PartyId,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    let space = ReducedSpace::for_party(session.fed, party)?;
    let target = space.target.expect("party unit present");
    unit_shapley_mc(session, &space, token, target, iterations, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupMode {
    /// One party federated at a time, others individual.
    PerParty,
    /// Every party federated simultaneously.
    AllAtOnce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartyValue {
    pub party: PartyId,
    pub features: Vec<usize>,
    pub phi: f64,
    /// Values of the other individual features in this party's run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub others: Vec<FeatureValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupShapleyReport {
    pub instance_id: usize,
    pub mode: GroupMode,
    pub prediction: f64,
    pub baseline: f64,
    #[serde(rename = "M")]
    pub iterations: usize,
    pub seed: u64,
    pub parties: Vec<PartyValue>,
    pub transcript_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupOptions {
    pub iterations: usize,
    pub root_seed: u64,
    pub mode: GroupMode,
    /// Also estimate the other individual features in each per-party run.
    pub include_others: bool,
}

/// Per-unit streams: unit `u` of `party`'s run for `instance` uses
/// `derive_seed(root, [instance, party, u])`; the party's own unit uses
/// `derive_seed(root, [instance, party])`.
pub fn federated_group_shapley(
    fed: &Federation,
    instance: usize,
    opts: GroupOptions,
    capture: bool,
) -> Result<(GroupShapleyReport, Vec<TranscriptEntry>)> {
    let token = fed.token(instance)?.to_string();
    let mut session = fed.session(capture);
    let d = fed.d;
    let prediction = session.federated_predict(&token, &vec![true; d])?;
    let baseline = session.federated_predict(&token, &vec![false; d])?;
    let mut parties = Vec::with_capacity(fed.parties.len());
    match opts.mode {
        GroupMode::PerParty => {
            for party in &fed.parties {
                let space = ReducedSpace::for_party(fed, party.id)?;
                let target = space.target.expect("party unit present");
                let s = seed::derive_seed(opts.root_seed, &[instance as u64, party.id as u64]);
                let phi =
                    unit_shapley_mc(&mut session, &space, &token, target, opts.iterations, s)?;
                let mut others = Vec::new();
                if opts.include_others {
                    for (u, unit) in space.units.iter().enumerate() {
                        if u == target {
                            continue;
                        }
                        let s = seed::derive_seed(
                            opts.root_seed,
                            &[instance as u64, party.id as u64, u as u64],
                        );
                        others.push(FeatureValue {
                            feature: unit[0],
                            name: format!("f{}", unit[0]),
                            phi: unit_shapley_mc(
                                &mut session,
                                &space,
                                &token,
                                u,
                                opts.iterations,
                                s,
                            )?,
                        });
                    }
                }
                parties.push(PartyValue {
                    party: party.id,
                    features: party.feature_indices.clone(),
                    phi,
                    others,
                });
            }
        }
        GroupMode::AllAtOnce => {
            let space = ReducedSpace::all_parties(fed);
            for party in &fed.parties {
                let s = seed::derive_seed(opts.root_seed, &[instance as u64, party.id as u64]);
                parties.push(PartyValue {
                    party: party.id,
                    features: party.feature_indices.clone(),
                    phi: unit_shapley_mc(
                        &mut session,
                        &space,
                        &token,
                        party.id,
                        opts.iterations,
                        s,
                    )?,
                    others: Vec::new(),
                });
            }
        }
    }
    let report = GroupShapleyReport {
        instance_id: instance,
        mode: opts.mode,
        prediction,
        baseline,
        iterations: opts.iterations,
        seed: opts.root_seed,
        parties,
        transcript_length: session.message_count(),
    };
    Ok((report, session.into_transcript()))
}

/// Runs [`federated_group_shapley`] for many instances in parallel, each with
/// its own session. Results come back in input order.
pub fn federated_group_shapley_batch(
    fed: &Federation,
    instances: &[usize],
    opts: GroupOptions,
) -> Result<Vec<GroupShapleyReport>> {
    instances
        .par_iter()
        .map(|&i| federated_group_shapley(fed, i, opts, false).map(|(r, _)| r))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditVerdict {
    pub pass: bool,
    pub inspected: usize,
    pub offending: Vec<usize>,
}

/// Checks that everything the evaluator received is a scalar prediction and
/// everything it sent is a token-bearing predict request to the host.
pub fn privacy_audit(transcript: &[TranscriptEntry]) -> AuditVerdict {
    let offending: Vec<usize> = transcript
        .iter()
        .filter(|e| {
            let m = &e.message;
            if e.to == Role::Evaluator {
                !(e.from == Role::Host
                    && m.kind == MessageKind::PredictResponse
                    && m.prediction.is_some()
                    && m.payload.is_none()
                    && m.mask.is_none()
                    && m.instance_ref.is_none())
            } else if e.from == Role::Evaluator {
                !(e.to == Role::Host
                    && m.kind == MessageKind::PredictRequest
                    && m.payload.is_none()
                    && matches!(m.instance_ref, Some(InstanceRef::RealId { .. })))
            } else {
                false
            }
        })
        .map(|e| e.index)
        .collect();
    AuditVerdict {
        pass: offending.is_empty(),
        inspected: transcript.len(),
        offending,
    }
}
