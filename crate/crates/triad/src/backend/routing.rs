//! Dispatches each role to its own backend.
//!
//! The training loop talks to one [`Backend`]; this one lets, say, a
//! scripted proposer and judge drive a trainable solver, which is how the
//! closed-loop tests isolate a single role's learning.

use std::collections::BTreeMap;

use super::{Backend, BackendError, GenerationRequest, UpdateBatch, UpdateReport};
use crate::domain::RoleId;

pub struct RoleRoutingBackend {
    routes: BTreeMap<RoleId, Box<dyn Backend>>,
}

impl RoleRoutingBackend {
    pub fn new(routes: BTreeMap<RoleId, Box<dyn Backend>>) -> Result<Self, BackendError> {
        if routes.is_empty() {
            return Err(BackendError::Fatal("no roles routed".into()));
        }
        Ok(RoleRoutingBackend { routes })
    }

    /// Convenience for the common all-three-roles split.
    pub fn three_way(
        proposer: Box<dyn Backend>,
        solver: Box<dyn Backend>,
        judge: Box<dyn Backend>,
    ) -> Self {
        let mut routes: BTreeMap<RoleId, Box<dyn Backend>> = BTreeMap::new();
        routes.insert(RoleId::Proposer, proposer);
        routes.insert(RoleId::Solver, solver);
        routes.insert(RoleId::Judge, judge);
        RoleRoutingBackend { routes }
    }

    fn route(&self, role: RoleId) -> Result<&dyn Backend, BackendError> {
        self.routes
            .get(&role)
            .map(|b| b.as_ref())
            .ok_or(BackendError::UnknownRole(role))
    }

    pub fn backend(&self, role: RoleId) -> Option<&dyn Backend> {
        self.routes.get(&role).map(|b| b.as_ref())
    }

    pub fn backend_mut(&mut self, role: RoleId) -> Option<&mut (dyn Backend + 'static)> {
        self.routes.get_mut(&role).map(|b| b.as_mut())
    }
}

impl Backend for RoleRoutingBackend {
    fn generate(&self, request: &GenerationRequest) -> Result<String, BackendError> {
        self.route(request.role)?.generate(request)
    }

    fn apply_update(&mut self, batch: &UpdateBatch) -> Result<UpdateReport, BackendError> {
        batch.validate()?;
        for item in &batch.items {
            if !self.routes.contains_key(&item.role) {
                return Err(BackendError::UnknownRole(item.role));
            }
        }

        let mut split: BTreeMap<RoleId, UpdateBatch> = BTreeMap::new();
        for item in &batch.items {
            split
                .entry(item.role)
                .or_insert_with(|| UpdateBatch { items: Vec::new() })
                .items
                .push(item.clone());
        }

        let mut merged = UpdateReport {
            per_role: BTreeMap::new(),
            applied: false,
        };
        for (role, sub_batch) in split {
            let backend = self.routes.get_mut(&role).expect("checked above");
            let report = backend.apply_update(&sub_batch)?;
            merged.applied |= report.applied;
            merged.per_role.extend(report.per_role);
        }
        Ok(merged)
    }

    fn kind(&self) -> &'static str {
        "routing"
    }

    fn snapshot_state(&self) -> Option<serde_json::Value> {
        let mut states = serde_json::Map::new();
        for (role, backend) in &self.routes {
            let state = backend.snapshot_state().unwrap_or(serde_json::Value::Null);
            states.insert(role.name().to_string(), state);
        }
        Some(serde_json::Value::Object(states))
    }

    fn restore_state(&mut self, state: &serde_json::Value) -> Result<(), BackendError> {
        let map = state
            .as_object()
            .ok_or_else(|| BackendError::BadState("routing state must be an object".into()))?;
        for (role, backend) in self.routes.iter_mut() {
            match map.get(role.name()) {
                Some(serde_json::Value::Null) | None => {}
                Some(sub_state) => backend.restore_state(sub_state)?,
            }
        }
        Ok(())
    }
}
