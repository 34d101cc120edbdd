//! Wire the gateway to an OpenAI-style chat endpoint with credentials,
//! timeouts, and retries.
//!
//! The endpoint here is a local port nothing listens on, so the example runs
//! without network access and ends in the transport error a real outage
//! would produce. Point `endpoint` at a live server and export a real key to
//! send the request for real.

use std::sync::Arc;

use pa_isp::gateway::{
    stage, ChatRequest, Gateway, RemoteChatProvider, RemoteProviderConfig, RetryPolicy,
};

fn main() -> anyhow::Result<()> {
    std::env::set_var("PA_ISP_EXAMPLE_KEY", "demo-key-not-a-secret");
    let config = RemoteProviderConfig {
        endpoint: "http://127.0.0.1:9/v1/chat/completions".to_string(),
        model: "clinical-summarizer-lite".to_string(),
        credential_env: Some("PA_ISP_EXAMPLE_KEY".to_string()),
        timeout_secs: 2,
        max_input_chars: Some(12_000),
    };
    println!("provider: model '{}' at {}", config.model, config.endpoint);

    let retry = RetryPolicy { max_attempts: 2, base_delay_ms: 50, max_delay_ms: 200 };
    let gateway = Gateway::builder()
        .bind(stage::SUMMARIZE, Arc::new(RemoteChatProvider::new(config)?))
        .retry(retry)
        .requests_per_sec(5.0)
        .build();

    let request = ChatRequest::new(
        stage::SUMMARIZE,
        "You summarize clinical case reports faithfully and concisely.",
        "Summarize: a patient presented with acute chest pain...",
    )
    .with_temperature(0.0);

    println!("sending one request (nothing listens on the endpoint, failure is expected)");
    match gateway.complete(&request) {
        Ok(response) => println!("reply from {}: {}", response.provider_id, response.text),
        Err(err) => println!("gateway gave up: {err}"),
    }
    Ok(())
}
