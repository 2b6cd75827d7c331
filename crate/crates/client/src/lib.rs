//! Client for the teleoperation gateway: typed wrappers over the HTTP
//! endpoints and a WebSocket connection speaking the gateway protocol.

use biteleop_core::api::{
    ApiError, FkFixtures, GenTraceRequest, GenTraceResponse, MetricsRequest, MetricsResponse, RecordRefRequest,
    RecordRefResponse, ReferenceLibraryMsg, ReplayRequest, ReplayResponse, Status,
};
use biteleop_core::input::Side;
use biteleop_core::protocol::{
    decode_server, encode_command, CommandMessage, EncodeError, ParseError, ServerMessage, StateMessage,
};
use futures::{SinkExt, StreamExt};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

#[derive(Debug, Error)]
pub enum ClientError {
    /// The server answered with an error body.
    #[error("{} error: {}", .0.kind, .0.message)]
    Api(ApiError),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("connection closed")]
    Closed,
}

impl ClientError {
    /// The `kind` of an API error, if this is one.
    pub fn api_kind(&self) -> Option<&str> {
        match self {
            ClientError::Api(e) => Some(&e.kind),
            _ => None,
        }
    }
}

impl From<reqwest::Error> for ClientError {
    fn from(e: reqwest::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

impl From<tokio_tungstenite::tungstenite::Error> for ClientError {
    fn from(e: tokio_tungstenite::tungstenite::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: reqwest::Client,
}

impl HttpClient {
    /// `base` is the server root, e.g. `http://127.0.0.1:8765`.
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.text().await?;
        match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Status {
                status: status.as_u16(),
                body,
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        Self::decode(self.http.get(format!("{}{path}", self.base)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(format!("{}{path}", self.base)).json(body).send().await?).await
    }

    pub async fn replay(&self, req: &ReplayRequest) -> Result<ReplayResponse, ClientError> {
        self.post("/v1/replay", req).await
    }

    pub async fn metrics(&self, req: &MetricsRequest) -> Result<MetricsResponse, ClientError> {
        self.post("/v1/metrics", req).await
    }

    pub async fn gen_trace(&self, req: &GenTraceRequest) -> Result<GenTraceResponse, ClientError> {
        self.post("/v1/gen-trace", req).await
    }

    pub async fn status(&self) -> Result<Status, ClientError> {
        self.get("/v1/status").await
    }

    pub async fn state(&self) -> Result<StateMessage, ClientError> {
        self.get("/v1/state").await
    }

    pub async fn reference_library(&self) -> Result<ReferenceLibraryMsg, ClientError> {
        self.get("/v1/reference-library").await
    }

    pub async fn record_reference(&self, label: &str) -> Result<usize, ClientError> {
        let r: RecordRefResponse = self
            .post(
                "/v1/reference-library/record",
                &RecordRefRequest { label: label.into() },
            )
            .await?;
        Ok(r.index)
    }

    pub async fn fk_fixtures(&self, side: Side, count: usize, seed: u64) -> Result<FkFixtures, ClientError> {
        self.get(&format!("/v1/fk-fixtures?side={side}&count={count}&seed={seed}"))
            .await
    }

    /// The chain file text for one arm.
    pub async fn chain(&self, side: Side) -> Result<String, ClientError> {
        let resp = self.http.get(format!("{}/v1/chain/{side}", self.base)).send().await?;
        if resp.status().is_success() {
            Ok(resp.text().await?)
        } else {
            Self::decode::<String>(resp).await
        }
    }

    /// WebSocket URL of this server.
    pub fn ws_url(&self, observer: bool) -> String {
        let root = self
            .base
            .strip_prefix("http://")
            .map(|r| format!("ws://{r}"))
            .or_else(|| self.base.strip_prefix("https://").map(|r| format!("wss://{r}")))
            .unwrap_or_else(|| self.base.clone());
        if observer {
            format!("{root}/ws?role=observer")
        } else {
            format!("{root}/ws")
        }
    }
}

/// One WebSocket connection to the gateway.
pub struct GatewayClient {
    ws: WebSocketStream<MaybeTlsStream<TcpStream>>,
}

impl GatewayClient {
    pub async fn connect(url: &str) -> Result<Self, ClientError> {
        let (ws, _) = tokio_tungstenite::connect_async(url).await?;
        Ok(Self { ws })
    }

    pub async fn send(&mut self, msg: &CommandMessage) -> Result<(), ClientError> {
        let text = encode_command(msg)?;
        self.send_raw(&text).await
    }

    /// Sends text as-is; for testing how the server treats bad input.
    pub async fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
        self.ws.send(Message::text(text)).await?;
        Ok(())
    }

    pub async fn send_binary(&mut self, bytes: Vec<u8>) -> Result<(), ClientError> {
        self.ws.send(Message::binary(bytes)).await?;
        Ok(())
    }

    /// The next protocol message; control frames are skipped.
    pub async fn next(&mut self) -> Result<ServerMessage, ClientError> {
        loop {
            match self.ws.next().await {
                None | Some(Ok(Message::Close(_))) => return Err(ClientError::Closed),
                Some(Err(e)) => return Err(e.into()),
                Some(Ok(Message::Text(t))) => return Ok(decode_server(t.as_str())?),
                Some(Ok(_)) => continue,
            }
        }
    }

    /// Skips state messages until a reply (ack or error) arrives.
    pub async fn next_reply(&mut self) -> Result<ServerMessage, ClientError> {
        loop {
            match self.next().await? {
                ServerMessage::State(_) => continue,
                other => return Ok(other),
            }
        }
    }

    pub async fn close(mut self) -> Result<(), ClientError> {
        self.ws.close(None).await?;
        Ok(())
    }
}
