use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use socialtv_ffi::*;

fn last_error() -> String {
    let p = socialtv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { socialtv_string_free(p) };
    s
}

const RECORDS: &str = concat!(
    r#"{"record":"user","user_id":"a","name":"Ana","gender_code":0,"age":30}"#, "\n",
    r#"{"record":"user","user_id":"b","name":"Juan","gender_code":0,"age":31}"#, "\n",
    r#"{"record":"device","device_id":"tv","screen_class":"tv","image_support":true,"max_list_items":8,"max_payload_bytes":4096}"#, "\n",
    r#"{"record":"node","node_id":"na","user_id":"a","device_id":"tv"}"#, "\n",
    r#"{"record":"node","node_id":"nb","user_id":"b","device_id":"tv"}"#, "\n",
    r#"{"record":"arc","kind":"user_user","a":"na","b":"nb","created_at":1}"#, "\n",
);

#[test]
fn file_store_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("s.jsonl").to_str().unwrap()).unwrap();
    let records = CString::new(RECORDS).unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(socialtv_store_open(path.as_ptr(), &mut h), SocialtvStatus::Ok);
        let mut n = 0usize;
        assert_eq!(socialtv_store_import(h, records.as_ptr(), &mut n), SocialtvStatus::Ok);
        assert_eq!(n, 6);
        assert_eq!(socialtv_store_close(h), SocialtvStatus::Ok);

        let mut h = ptr::null_mut();
        assert_eq!(socialtv_store_open(path.as_ptr(), &mut h), SocialtvStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(socialtv_store_export(h, &mut out), SocialtvStatus::Ok);
        let text = take(out);
        assert_eq!(text.lines().count(), 6);
        assert!(text.contains(r#""user_id":"b""#));
        assert_eq!(socialtv_store_close(h), SocialtvStatus::Ok);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(socialtv_store_open(ptr::null(), &mut h), SocialtvStatus::Ok);

        let dangling = CString::new(r#"{"record":"node","node_id":"n","user_id":"ghost","device_id":"tv"}"#).unwrap();
        assert_eq!(socialtv_store_import(h, dangling.as_ptr(), ptr::null_mut()), SocialtvStatus::Corrupt);
        assert!(last_error().contains("ghost"));

        let garbage = CString::new("{nope").unwrap();
        assert_eq!(socialtv_store_import(h, garbage.as_ptr(), ptr::null_mut()), SocialtvStatus::Parse);
        assert!(last_error().starts_with("line 1"));

        assert_eq!(socialtv_store_import(ptr::null(), garbage.as_ptr(), ptr::null_mut()), SocialtvStatus::NullArgument);

        let mut issues = 7usize;
        let mut report = ptr::null_mut();
        assert_eq!(socialtv_store_validate(h, &mut issues, &mut report), SocialtvStatus::Ok);
        assert_eq!(issues, 0);
        assert_eq!(take(report), "[]");
        assert!(socialtv_last_error().is_null());

        assert_eq!(socialtv_store_close(h), SocialtvStatus::Ok);
    }
}

#[test]
fn rules_and_labels() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(socialtv_type_label(0, &mut out), SocialtvStatus::InvalidArgument);
        assert_eq!(socialtv_type_label(1, &mut out), SocialtvStatus::Ok);
        assert_eq!(take(out), socialtv::profile::TypeCode::new(1).unwrap().label());

        let mut codes = [0u8; 27];
        let mut len = 0usize;
        let prefs = [3u32];
        assert_eq!(
            socialtv_match_rules(1, 30, prefs.as_ptr(), 1, codes.as_mut_ptr(), &mut len),
            SocialtvStatus::Ok
        );
        let profile = socialtv::profile::UserProfile {
            user_id: socialtv::ids::UserId::new("x").unwrap(),
            name: String::new(),
            gender_code: 1,
            age: 30,
            activity_prefs: [3].into(),
            photo_ref: None,
        };
        let expected: Vec<u8> = socialtv::rules::match_rules(&profile, &socialtv::rules::default_rules())
            .into_iter()
            .map(|c| c.get())
            .collect();
        assert_eq!(&codes[..len], &expected[..]);

        assert_eq!(
            socialtv_match_rules(0, -3, ptr::null(), 0, codes.as_mut_ptr(), &mut len),
            SocialtvStatus::InvalidArgument
        );
    }
}

#[test]
fn simulate_reports_json() {
    let records = CString::new(RECORDS).unwrap();
    let seed = CString::new("a").unwrap();
    unsafe {
        let mut h = ptr::null_mut();
        assert_eq!(socialtv_store_open(ptr::null(), &mut h), SocialtvStatus::Ok);
        assert_eq!(socialtv_store_import(h, records.as_ptr(), ptr::null_mut()), SocialtvStatus::Ok);
        let mut out = ptr::null_mut();
        // type 9 matches every adult in the built-in table
        assert_eq!(socialtv_simulate(h, seed.as_ptr(), 9, 1, &mut out), SocialtvStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["report"]["reached"]["b"], 1);
        assert_eq!(socialtv_store_close(h), SocialtvStatus::Ok);
    }
}

fn target_dir() -> PathBuf {
    // <target>/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // test builds only produce the rlib
    let profile = if cfg!(debug_assertions) { &[][..] } else { &["--release"][..] };
    let built = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "socialtv-ffi", "--lib"])
        .args(profile)
        .env("CARGO_TARGET_DIR", target_dir().parent().unwrap())
        .status()
        .unwrap();
    assert!(built.success());
    let lib = target_dir().join("libsocialtv_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("socialtv_smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(crate_dir.join("include"))
        .arg(crate_dir.join("tests/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
