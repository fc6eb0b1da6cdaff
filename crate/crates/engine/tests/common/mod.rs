#![allow(dead_code)]

use std::net::SocketAddr;

use drape_core::backend::mock::synthetic;
use drape_core::imaging::encode_rgb_png;

/// Serves `app` on an ephemeral local port from a background runtime.
pub fn spawn(app: axum::Router) -> String {
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

pub fn photo(w: u32, h: u32) -> Vec<u8> {
    encode_rgb_png(&synthetic::photo(w, h).unwrap()).unwrap()
}

pub fn client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(std::time::Duration::from_secs(60))
        .build()
        .unwrap()
}
