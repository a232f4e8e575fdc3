/** Runtime configuration: a single API base URL. */

declare global {
  interface Window {
    API_BASE_URL?: string;
  }
}

/**
 * Resolution order: explicit `?api=` query parameter, `window.API_BASE_URL`
 * (set by the hosting page), otherwise same-origin.
 */
export function apiBaseUrl(): string {
  if (typeof window !== "undefined") {
    const fromQuery = new URLSearchParams(window.location.search).get("api");
    if (fromQuery) return fromQuery.replace(/\/$/, "");
    if (window.API_BASE_URL) return window.API_BASE_URL.replace(/\/$/, "");
    if (window.location.origin !== "null") return window.location.origin;
  }
  return "http://127.0.0.1:8000";
}
