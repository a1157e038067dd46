//! Blocking HTTP client over the server's wire types.

use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use ganlab_server::api::*;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Result<Self> {
        Ok(Client {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(600))
                .build()?,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check<T: serde::de::DeserializeOwned>(resp: reqwest::blocking::Response) -> Result<T> {
        let status = resp.status();
        if status.is_success() {
            Ok(resp.json()?)
        } else {
            let body: ErrorBody = resp
                .json()
                .unwrap_or_else(|_| ErrorBody {
                    error: format!("http status {status}"),
                });
            Err(anyhow!("server error ({status}): {}", body.error))
        }
    }

    pub fn healthz(&self) -> Result<()> {
        let resp = self.http.get(self.url("/api/v1/healthz")).send()?;
        let _: serde_json::Value = Self::check(resp)?;
        Ok(())
    }

    pub fn submit(&self, req: &SubmitExperimentRequest) -> Result<u64> {
        let resp = self
            .http
            .post(self.url("/api/v1/experiments"))
            .json(req)
            .send()?;
        let out: SubmitExperimentResponse = Self::check(resp)?;
        Ok(out.job_id)
    }

    pub fn job(&self, id: u64) -> Result<JobStatus> {
        let resp = self
            .http
            .get(self.url(&format!("/api/v1/jobs/{id}")))
            .send()?;
        Self::check(resp)
    }

    pub fn jobs(&self) -> Result<JobList> {
        let resp = self.http.get(self.url("/api/v1/jobs")).send()?;
        Self::check(resp)
    }

    pub fn table(&self, id: u64) -> Result<String> {
        let resp = self
            .http
            .get(self.url(&format!("/api/v1/jobs/{id}/table")))
            .send()?;
        let status = resp.status();
        if status.is_success() {
            Ok(resp.text()?)
        } else {
            Err(anyhow!("server error ({status})"))
        }
    }

    /// Poll until the job leaves the running state; returns the final status.
    pub fn wait(&self, id: u64, poll: Duration) -> Result<JobStatus> {
        loop {
            let status = self.job(id).context("polling job")?;
            if status.state != JobState::Running {
                return Ok(status);
            }
            std::thread::sleep(poll);
        }
    }

    pub fn eval(&self, req: &EvalRequest) -> Result<EvalResponse> {
        let resp = self.http.post(self.url("/api/v1/eval")).json(req).send()?;
        Self::check(resp)
    }

    pub fn report(&self, req: &ReportRequest) -> Result<ReportResponse> {
        let resp = self.http.post(self.url("/api/v1/report")).json(req).send()?;
        Self::check(resp)
    }
}
