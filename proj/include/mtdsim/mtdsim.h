#ifndef MTDSIM_MTDSIM_H
#define MTDSIM_MTDSIM_H

#include <stddef.h>
#include <stdint.h>

#if defined(MTDSIM_BUILDING)
#define MTDSIM_API __attribute__((visibility("default")))
#else
#define MTDSIM_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtd_status {
  MTD_OK = 0,
  MTD_E_ARGUMENT = 1,
  MTD_E_PARSE = 2,
  MTD_E_IO = 3,
  MTD_E_RUNTIME = 4,
  MTD_E_BUDGET = 5,
  MTD_E_CONNECTION = 6,
  MTD_E_DEGENERATE = 7
} mtd_status;

/* Catalog, dataset splits and a live oracle. */
typedef struct mtd_session mtd_session;
typedef struct mtd_server mtd_server;

MTDSIM_API const char* mtd_version(void);
/* Message for the last failing call on this thread; never NULL. */
MTDSIM_API const char* mtd_last_error(void);
/* Frees strings returned through char** out-parameters. */
MTDSIM_API void mtd_string_free(char* s);

/* synth_json: {"m","n_per_class","delta","layout","seed"}; missing keys take defaults. */
MTDSIM_API mtd_status mtd_dataset_generate(const char* synth_json, const char* csv_path, const char* catalog_path,
                                           uint64_t* fingerprint_out);
MTDSIM_API mtd_status mtd_dataset_fingerprint(const char* csv_path, const char* catalog_path,
                                              uint64_t* fingerprint_out);

MTDSIM_API mtd_status mtd_session_train(const char* csv_path, const char* catalog_path, const char* oracle_json,
                                        uint64_t split_seed, mtd_session** out);
MTDSIM_API mtd_status mtd_session_load(const char* path, mtd_session** out);
/* CBOR when the path ends in ".bin", JSON otherwise. */
MTDSIM_API mtd_status mtd_session_save(const mtd_session* s, const char* path);
MTDSIM_API void mtd_session_free(mtd_session* s);

MTDSIM_API mtd_status mtd_session_describe(const mtd_session* s, char** json_out);
MTDSIM_API size_t mtd_session_feature_count(const mtd_session* s);
MTDSIM_API uint64_t mtd_session_query_count(const mtd_session* s);
/* indices: set features, strictly ascending. */
MTDSIM_API mtd_status mtd_session_query(mtd_session* s, const uint32_t* indices, size_t n, int* label_out);

/* Runs one campaign against the session oracle, or against `remote` ("host:port") when non-NULL.
   outcomes_jsonl gets one outcome per line; summary_json gets the metrics report. Either may be NULL. */
MTDSIM_API mtd_status mtd_session_attack(mtd_session* s, const char* request_json, const char* remote,
                                         char** outcomes_jsonl, char** summary_json);

/* request: {"mode":"nature","n","samples"} or {"mode":"budget","n_large","resolution","sample"}. */
MTDSIM_API mtd_status mtd_session_fingerprint(mtd_session* s, const char* request_json, const char* remote,
                                              char** json_out);

/* Runs an experiment spec; reports come back as JSON lines. */
MTDSIM_API mtd_status mtd_sweep(const char* spec_json, size_t jobs, char** reports_jsonl);

/* Formats: "csv" or "jsonl". */
MTDSIM_API mtd_status mtd_report_convert(const char* in_path, const char* in_format, const char* out_path,
                                         const char* out_format);

/* Serves a copy of the session oracle. policy_json: {"max_queries_per_client", "idle_tick"}; may be NULL.
   Port 0 binds a free port. */
MTDSIM_API mtd_status mtd_server_start(const mtd_session* s, const char* host, int port, const char* policy_json,
                                       mtd_server** out);
MTDSIM_API int mtd_server_port(const mtd_server* srv);
MTDSIM_API void mtd_server_wait(mtd_server* srv);
MTDSIM_API void mtd_server_stop(mtd_server* srv);
MTDSIM_API void mtd_server_free(mtd_server* srv);

#ifdef __cplusplus
}
#endif

#endif
